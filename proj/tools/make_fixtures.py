#!/usr/bin/env python3
"""Writes the synthetic source snapshots under tests/fixtures.

Every series is drawn from a fixed seed, so rerunning reproduces the
committed files byte for byte.

    python3 tools/make_fixtures.py [outdir]
"""

import csv
import datetime as dt
import sys
from pathlib import Path

import numpy as np

START = dt.date(2020, 1, 22)
END = dt.date(2020, 7, 25)
DAYS = (END - START).days + 1
DATES = [START + dt.timedelta(days=i) for i in range(DAYS)]


def idx(iso):
    return (dt.date.fromisoformat(iso) - START).days


def weekday(i):
    # Sunday = 0
    return (DATES[i].weekday() + 1) % 7


def nb(rng, mean, size):
    mean = np.maximum(mean, 0.0)
    p = size / (size + mean)
    return rng.negative_binomial(size, p).astype(np.int64)


def epidemic(rng, onset, scale, centre, width, tail=0.0, size=30.0, week=None):
    t = np.arange(DAYS, dtype=float)
    mean = scale / (1.0 + np.exp(-(t - centre) / width)) + tail * np.maximum(t - centre, 0.0)
    mean[t < onset] = 0.0
    if week is not None:
        mean *= np.array([week[weekday(i)] for i in range(DAYS)])
    z = nb(rng, mean, size)
    z[:onset] = 0
    if onset < DAYS:
        z[onset] = max(z[onset], 1)
    return z


def deaths_from(rng, cases, rate, lag):
    lagged = np.concatenate([np.zeros(lag), cases[:-lag]]) if lag else cases
    return rng.binomial(lagged.astype(np.int64), rate)


def segmented(rng, level, slope1, slope2, brk, size, week):
    """Increments with a log-linear joint at `brk` over 2020-03-15..END."""
    first = idx("2020-03-15")
    t = np.arange(DAYS - first, dtype=float) + 1.0
    phi = idx(brk) - first + 1
    eta = np.log(level) + slope1 * (t - 1) + (slope2 - slope1) * np.maximum(t - phi, 0.0)
    mean = np.exp(eta) * np.array([week[weekday(first + i)] for i in range(len(t))])
    z = np.zeros(DAYS, dtype=np.int64)
    z[first:] = nb(rng, mean, size)
    lead = np.arange(first, dtype=float)
    ramp = level * np.exp(0.25 * (lead - first))
    z[:first] = nb(rng, ramp, size)
    return z


CASE_WEEK = [0.88, 0.85, 0.95, 1.02, 1.07, 1.13, 1.10]
DEATH_WEEK = [0.70, 0.75, 1.15, 1.15, 1.10, 1.05, 0.95]

STATE_FIPS = {
    "Arizona": "04", "California": "06", "Florida": "12", "Illinois": "17", "Missouri": "29", "Nevada": "32",
    "New Jersey": "34", "New York": "36", "South Carolina": "45", "Texas": "48", "Utah": "49", "Washington": "53",
    "Puerto Rico": "72",
}
ABBREV = {
    "Arizona": "AZ", "California": "CA", "Florida": "FL", "Illinois": "IL", "Missouri": "MO", "Nevada": "NV",
    "New Jersey": "NJ", "New York": "NY", "South Carolina": "SC", "Texas": "TX", "Utah": "UT", "Washington": "WA",
    "Puerto Rico": "PR",
}

COUNTIES = [
    # fips, county, state, onset, scale, centre, width, tail
    ("53061", "Snohomish", "Washington", 0, 40, 60, 8, 0.6),
    ("06037", "Los Angeles", "California", 40, 900, 80, 10, 25.0),
    ("17031", "Cook", "Illinois", 38, 1100, 75, 7, 2.0),
    ("04013", "Maricopa", "Arizona", 40, 300, 120, 9, 40.0),
    ("12086", "Miami-Dade", "Florida", 45, 500, 125, 8, 30.0),
    ("34013", "Essex", "New Jersey", 44, 300, 65, 6, 0.0),
    ("36059", "Nassau", "New York", 44, 700, 62, 5, 0.0),
    ("48185", "Grimes", "Texas", 70, 4, 110, 10, 0.05),
    ("36005", "Bronx", "New York", 45, 900, 62, 5, 0.0),
    ("36047", "Kings", "New York", 44, 1100, 62, 5, 0.0),
    ("36061", "New York", "New York", 43, 500, 62, 5, 0.0),
    ("36081", "Queens", "New York", 44, 1300, 62, 5, 0.0),
    ("36085", "Richmond", "New York", 46, 250, 62, 5, 0.0),
    ("49003", "Box Elder", "Utah", 60, 5, 130, 12, 0.2),
    ("49005", "Cache", "Utah", 55, 8, 130, 10, 0.4),
    ("49033", "Rich", "Utah", 90, 0.5, 140, 10, 0.0),
]
NYC = {"36005", "36047", "36061", "36081", "36085"}
BEAR_RIVER = {"49003", "49005", "49033"}


def county_truth(rng):
    truth = {}
    for fips, county, state, onset, scale, centre, width, tail in COUNTIES:
        cases = epidemic(rng, onset, scale, centre, width, tail, size=20.0, week=CASE_WEEK)
        deaths = deaths_from(rng, cases, 0.03, 10)
        truth[fips] = (county, state, cases, deaths)
    # Grimes: two batch releases on top of a small baseline.
    county, state, cases, deaths = truth["48185"]
    cases = cases.copy()
    cases[idx("2020-06-05")] += 150
    cases[idx("2020-07-09")] += 260
    truth["48185"] = (county, state, cases, deaths)
    return truth


def cum(z):
    return np.cumsum(z).astype(np.int64)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def nyt_counties(path, truth, unknown_nj):
    rows = []
    for i, d in enumerate(DATES):
        day = []
        nyc_c = sum(cum(truth[f][2])[i] for f in NYC)
        nyc_d = sum(cum(truth[f][3])[i] for f in NYC)
        if nyc_c > 0:
            day.append((d.isoformat(), "New York City", "New York", "", int(nyc_c), int(nyc_d)))
        for fips, (county, state, cases, deaths) in truth.items():
            if fips in NYC:
                continue
            yc, yd = cum(cases), cum(deaths)
            if yc[i] > 0:
                day.append((d.isoformat(), county, state, fips, int(yc[i]), int(yd[i])))
        uc = cum(unknown_nj)[i]
        if uc > 0:
            day.append((d.isoformat(), "Unknown", "New Jersey", "", int(uc), 0))
        rows.extend(sorted(day, key=lambda r: (r[2], r[1])))
    write_csv(path, ["date", "county", "state", "fips", "cases", "deaths"], rows)


def wide_dates(fmt):
    if fmt == "jhu":
        return [f"{d.month}/{d.day}/{d.year % 100}" for d in DATES]
    return [d.isoformat() for d in DATES]


def jhu(path, truth, metric, unassigned_nj, out_of_ny):
    which = 2 if metric == "confirmed" else 3
    header = ["UID", "iso2", "iso3", "code3", "FIPS", "Admin2", "Province_State", "Country_Region", "Lat", "Long_",
              "Combined_Key"]
    if metric == "deaths":
        header.append("Population")
    header += wide_dates("jhu")
    rows = []

    def row(uid, fips, admin2, state, values, pop=0):
        meta = [uid, "US", "USA", "840", fips, admin2, state, "US", "0.0", "0.0", f"{admin2}, {state}, US"]
        if metric == "deaths":
            meta.append(str(pop))
        rows.append(meta + [str(int(v)) for v in values])

    nyc_total = sum(cum(truth[f][which]) for f in NYC)
    for fips, (county, state, *_rest) in sorted(truth.items()):
        series = cum(truth[fips][which])
        if fips in BEAR_RIVER:
            continue
        if fips in NYC:
            series = nyc_total if fips == "36061" else np.zeros(DAYS, dtype=np.int64)
        if fips == "06037":
            # JHU books Los Angeles one day late.
            series = np.concatenate([[0], series[:-1]])
        row("840" + fips, fips + ".0", county, state, series, 100000)
    bear = sum(cum(truth[f][which]) for f in BEAR_RIVER)
    row("84070015", "", "Bear River", "Utah", bear, 190000)
    row("84090034", "90034.0", "Unassigned", "New Jersey", cum(unassigned_nj) if which == 2 else np.zeros(DAYS), 0)
    row("84080036", "80036.0", "Out of NY", "New York", cum(out_of_ny) if which == 2 else np.zeros(DAYS), 0)
    pr = np.zeros(DAYS, dtype=np.int64)
    pr[idx("2020-03-13"):] = 1
    row("63072001", "72001.0", "Adjuntas", "Puerto Rico", cum(pr), 18000)
    if which == 3:
        # Cook deaths revised down for one day.
        cook = next(r for r in rows if r[5] == "Cook")
        col = len(header) - DAYS + idx("2020-05-20")
        cook[col] = str(int(cook[col]) - 4)
    write_csv(path, header, rows)


def usafacts(path, truth, metric, unalloc):
    which = 2 if metric == "confirmed" else 3
    header = ["countyFIPS", "County Name", "State", "StateFIPS"] + wide_dates("usafacts")
    rows = []
    for state, values in sorted(unalloc.items()):
        v = cum(values) if which == 2 else np.zeros(DAYS, dtype=np.int64)
        rows.append(["0", "Statewide Unallocated", ABBREV[state], str(int(STATE_FIPS[state]))] +
                    [str(int(x)) for x in v])
    for fips, (county, state, cases, deaths) in sorted(truth.items()):
        z = (cases if which == 2 else deaths).copy()
        if fips == "04013" and which == 2:
            # USAFacts books Maricopa's July batch a week later.
            a, b = idx("2020-07-01"), idx("2020-07-08")
            moved = z[a:b].sum() // 2
            z[a:b] -= z[a:b] // 2
            z[b] += moved
        name = f"{county} County"
        rows.append([str(int(fips)), name, ABBREV[state], str(int(STATE_FIPS[state]))] + [str(int(x)) for x in cum(z)])
    write_csv(path, header, rows)


STATES_GENERIC = [
    # state, onset, scale, centre, width, tail, death_rate
    ("Washington", 0, 300, 65, 8, 6.0, 0.04),
    ("Illinois", 40, 2200, 95, 10, 3.0, 0.04),
    ("Arizona", 45, 600, 130, 9, 60.0, 0.02),
    ("New York", 38, 9000, 68, 5, 0.0, 0.07),
    ("Utah", 45, 150, 125, 10, 6.0, 0.01),
    ("Puerto Rico", 51, 40, 100, 10, 1.0, 0.02),
]

STATE_BREAKS = [
    # state, metric with the break, level at 03-15, slope before, slope after, break date
    ("California", "cases", 1000, 0.012, 0.03, "2020-06-10"),
    ("Florida", "cases", 100, 0.03, 0.05, "2020-06-07"),
    ("Missouri", "cases", 50, 0.02, 0.04, "2020-06-23"),
    ("Nevada", "cases", 20, 0.02, 0.05, "2020-06-09"),
    ("South Carolina", "deaths", 3, 0.015, 0.12, "2020-07-13"),
    ("Texas", "deaths", 2, 0.03, 0.07, "2020-07-01"),
]


def state_truth(rng):
    truth = {}
    for state, onset, scale, centre, width, tail, rate in STATES_GENERIC:
        cases = epidemic(rng, onset, scale, centre, width, tail, size=25.0, week=CASE_WEEK)
        deaths = deaths_from(rng, cases, rate, 12)
        truth[state] = [cases, deaths]
    for state, metric, level, s1, s2, brk in STATE_BREAKS:
        if metric == "cases":
            cases = segmented(rng, level, s1, s2, brk, 40.0, CASE_WEEK)
            deaths = deaths_from(rng, cases, 0.015, 14)
        else:
            deaths = segmented(rng, level, s1, s2, brk, 40.0, DEATH_WEEK)
            cases = segmented(rng, level * 60, 0.03, 0.03, brk, 40.0, CASE_WEEK)
        truth[state] = [cases, deaths]
    # New Jersey: spring wave, then 1,854 probable deaths booked on 06-25.
    cases = epidemic(rng, idx("2020-03-04"), 3200, 68, 6, 0.0, size=25.0, week=CASE_WEEK)
    t = np.arange(DAYS, dtype=float)
    dmean = 280 * np.exp(-0.5 * ((t - idx("2020-04-20")) / 16.0) ** 2) + 15 * (t > idx("2020-05-20"))
    dmean[: idx("2020-03-10")] = 0
    dmean *= np.array([DEATH_WEEK[weekday(i)] for i in range(DAYS)])
    deaths = nb(rng, dmean, 30.0)
    deaths[idx("2020-06-25")] += 1854
    truth["New Jersey"] = [cases, deaths]
    # New York revises one day of cases downward.
    ny = truth["New York"][0]
    ny[idx("2020-05-10")] = -12
    return truth


def nyt_states(path, truth):
    rows = []
    for i, d in enumerate(DATES):
        for state in sorted(truth):
            yc, yd = cum(truth[state][0]), cum(truth[state][1])
            if yc[i] > 0 or yd[i] > 0:
                rows.append([d.isoformat(), state, STATE_FIPS[state], int(yc[i]), int(yd[i])])
    write_csv(path, ["date", "state", "fips", "cases", "deaths"], rows)


def atlantic(path, truth, rng):
    first = idx("2020-03-04")
    rows = []
    recovered = {}
    for state in truth:
        yc = cum(np.maximum(truth[state][0], 0))
        lagged = np.concatenate([np.zeros(14, dtype=np.int64), yc[:-14]])
        recovered[state] = (0.6 * lagged).astype(np.int64)
    for i in range(DAYS - 1, first - 1, -1):
        d = DATES[i]
        for state in sorted(truth):
            # Atlantic counts through the previous evening.
            yc = cum(truth[state][0])
            yd = cum(truth[state][1])
            j = i - 1
            if yc[j] <= 0:
                continue
            rec = recovered[state][j]
            rows.append([d.strftime("%Y%m%d"), ABBREV[state], int(yc[j]), int(yd[j]),
                         int(rec) if i >= idx("2020-04-01") else "", "A"])
    write_csv(path, ["date", "state", "positive", "death", "recovered", "dataQualityGrade"], rows)


def national(path, rng):
    t = np.arange(DAYS, dtype=float)
    a = idx("2020-03-15")
    knots_c = [(0, 1.0), (a - 20, 30.0), (a, 700.0), (idx("2020-04-04"), 30000.0), (idx("2020-05-10"), 25000.0),
               (idx("2020-06-08"), 20000.0), (idx("2020-07-20"), 65000.0), (DAYS - 1, 63000.0)]
    knots_d = [(0, 0.0), (a, 10.0), (idx("2020-04-15"), 2000.0), (idx("2020-06-25"), 600.0),
               (DAYS - 1, 900.0)]

    def curve(knots):
        xs, ys = zip(*knots)
        logy = np.interp(t, xs, np.log(np.maximum(ys, 0.5)))
        return np.exp(logy)

    mc = curve(knots_c) * np.array([CASE_WEEK[weekday(i)] for i in range(DAYS)])
    md = curve(knots_d) * np.array([DEATH_WEEK[weekday(i)] for i in range(DAYS)])
    md[: a - 20] = 0
    cases = nb(rng, mc, 200.0)
    deaths = nb(rng, md, 200.0)
    yc, yd = cum(cases), cum(deaths)
    rows = [[d.isoformat(), int(yc[i]), int(yd[i])] for i, d in enumerate(DATES)]
    write_csv(path, ["date", "cases", "deaths"], rows)


def factors(path):
    rows = [
        ["53061", "Snohomish", "Washington", 822083, 86691, 13.9],
        ["06037", "Los Angeles", "California", 10039107, 68044, 13.5],
        ["17031", "Cook", "Illinois", 5150233, 64660, 14.7],
        ["04013", "Maricopa", "Arizona", 4485414, 65252, 15.9],
        ["12086", "Miami-Dade", "Florida", 2716940, 51347, 16.7],
        ["34013", "Essex", "New Jersey", 798975, 59302, 13.9],
        ["36059", "Nassau", "New York", 1356924, 116304, 17.8],
        ["36061", "New York City", "New York", 8336817, 63998, 15.4],
        ["49901", "Bear River", "Utah", 190000, 61500, 10.5],
    ]
    write_csv(path, ["ID", "County", "State", "population", "median_income", "pct_over_65"], rows)


CONFIGS = {
    "county.conf": """# County-level run over the three county sources.
sources = NYT, JHU, USAFacts
endpoint.NYT = nyt_counties.csv
endpoint.JHU.infection = jhu_confirmed.csv
endpoint.JHU.death = jhu_deaths.csv
endpoint.USAFacts.infection = usafacts_confirmed.csv
endpoint.USAFacts.death = usafacts_deaths.csv
offline = true
level = county
metrics = infection, death
snapshot_date = 2020-07-25
detect.cp_from = 2020-03-15
detect.cp_to = 2020-07-25
""",
    "nj.conf": """# State-level NYT run used by the review service tests.
sources = NYT
endpoint.NYT = nyt_states.csv
offline = true
level = state
metrics = death
snapshot_date = 2020-07-25
detect.cp_from = 2020-03-15
detect.cp_to = 2020-07-25
""",
    "states.conf": """# State-level comparison of NYT and The COVID Tracking Project.
sources = NYT, Atlantic
endpoint.NYT = nyt_states.csv
endpoint.Atlantic = atlantic_daily.csv
offline = true
level = state
metrics = infection, death
snapshot_date = 2020-07-25
detect.cp_from = 2020-03-15
detect.cp_to = 2020-07-25
""",
}


def main():
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parent.parent / "tests" / "fixtures"
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(20200725)

    truth = county_truth(rng)
    unknown_nj = epidemic(rng, 60, 15, 80, 8, 0.0, size=10.0)
    out_of_ny = epidemic(rng, 60, 3, 80, 8, 0.0, size=10.0)
    unalloc = {"New Jersey": unknown_nj, "New York": out_of_ny}
    nyt_counties(out / "nyt_counties.csv", truth, unknown_nj)
    jhu(out / "jhu_confirmed.csv", truth, "confirmed", unknown_nj, out_of_ny)
    jhu(out / "jhu_deaths.csv", truth, "deaths", unknown_nj, out_of_ny)
    usafacts(out / "usafacts_confirmed.csv", truth, "confirmed", unalloc)
    usafacts(out / "usafacts_deaths.csv", truth, "deaths", unalloc)

    states = state_truth(rng)
    nyt_states(out / "nyt_states.csv", states)
    atlantic(out / "atlantic_daily.csv", states, rng)
    national(out / "nyt_us.csv", rng)
    factors(out / "factors.csv")
    for name, text in CONFIGS.items():
        (out / name).write_text(text)


if __name__ == "__main__":
    main()
