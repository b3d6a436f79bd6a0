//! Reference audit rows for nine TEDS attributes, given as two-decimal
//! rates with FAIR/UNFAIR verdicts, replayed through the metric
//! operations. Every rate is in hundredths. Each row is turned into
//! confusion counts over 100 rows per cell that realize exactly the
//! printed rates, and the metric's rounded value and verdict must match
//! the printed ones.
//!
//! Rows whose printed numbers contradict each other are listed in
//! [`EXCLUDED`] and skipped.

use fairkit::fairness::{self, ClassCounts, GroupedOutcomes, Thresholds, Verdict};

use super::hundredths;

const F: Verdict = Verdict::Fair;
const U: Verdict = Verdict::Unfair;

/// Rows left out, with the reason.
pub const EXCLUDED: &[&str] = &[
    "multiclass DI, EDUC class 0: 0.80 is printed as UNFAIR, but 0.80 passes the four-fifths rule",
    "equal opportunity (binary), RACE sigmoid: 1 - 0.47 = 0.53 is printed as FAIR at threshold 0.2; the value is still checked, the verdict is not",
    "equal opportunity (multiclass), ETHNIC rbf: printed as 59.00, which is not a rate",
];

/// (attribute, [(class, DI, verdict)]); a `None` verdict is not checked.
const DI_MULTICLASS: &[(&str, [(usize, i128, Option<Verdict>); 4])] = &[
    ("GENDER", [(0, 43, Some(U)), (3, 78, Some(U)), (2, 2, Some(U)), (1, 81, Some(F))]),
    ("AGE", [(0, 56, Some(U)), (3, 1, Some(U)), (2, 65, Some(U)), (1, 97, Some(F))]),
    ("VET", [(0, 28, Some(U)), (3, 100, Some(F)), (2, 17, Some(U)), (1, 33, Some(U))]),
    ("EDUC", [(0, 80, None), (3, 100, Some(F)), (2, 38, Some(U)), (1, 73, Some(U))]),
    ("MARSTAT", [(0, 58, Some(U)), (3, 42, Some(U)), (2, 67, Some(U)), (1, 77, Some(U))]),
    ("EMPLOY", [(0, 36, Some(U)), (3, 100, Some(F)), (2, 100, Some(F)), (1, 75, Some(U))]),
    ("RACE", [(0, 92, Some(F)), (3, 0, Some(U)), (2, 34, Some(U)), (1, 81, Some(F))]),
    ("ETHNIC", [(0, 64, Some(U)), (3, 100, Some(F)), (2, 43, Some(U)), (1, 20, Some(U))]),
    ("PREG", [(0, 30, Some(U)), (3, 17, Some(U)), (2, 100, Some(F)), (1, 52, Some(U))]),
];

/// (attribute, rate of one group, rate of the other, printed difference)
const SPD_BINARY: &[(&str, i128, i128, i128)] = &[
    ("GENDER", 53, 46, 7),
    ("AGE", 51, 47, 4),
    ("VET", 34, 50, 16),
    ("EDUC", 51, 46, 5),
    ("MARSTAT", 55, 42, 13),
    ("EMPLOY", 49, 51, 2),
    ("RACE", 51, 48, 3),
    ("ETHNIC", 51, 35, 16),
    ("PREG", 47, 50, 3),
];

/// (attribute, [(class, SPD, max threshold)], some class at zero)
const SPD_MULTICLASS: &[(&str, [(usize, i128, i128); 4], bool)] = &[
    ("GENDER", [(0, 27, 26), (3, 7, 6), (2, 29, 26), (1, 5, 1)], false),
    ("AGE", [(0, 17, 16), (3, 30, 26), (2, 12, 11), (1, 1, 1)], false),
    ("VET", [(0, 63, 61), (3, 0, 0), (2, 21, 21), (1, 17, 16)], true),
    ("EDUC", [(0, 5, 1), (3, 0, 0), (2, 29, 26), (1, 8, 6)], true),
    ("MARSTAT", [(0, 14, 11), (3, 18, 16), (2, 10, 6), (1, 6, 6)], false),
    ("EMPLOY", [(0, 42, 41), (3, 0, 0), (2, 0, 0), (1, 8, 6)], true),
    ("RACE", [(0, 2, 1), (3, 35, 31), (2, 32, 31), (1, 5, 1)], false),
    ("ETHNIC", [(0, 14, 11), (3, 0, 0), (2, 32, 31), (1, 20, 16)], true),
    ("PREG", [(0, 58, 56), (3, 21, 21), (2, 0, 0), (1, 12, 11)], true),
];

/// (attribute, kernel, max TPR, min TPR, difference, verdict)
type OppRow = (&'static str, &'static str, i128, i128, i128, Option<Verdict>);

const EQ_OPP_BINARY: &[OppRow] = &[
    ("GENDER", "linear", 100, 0, 100, Some(U)),
    ("GENDER", "poly", 100, 0, 100, Some(U)),
    ("GENDER", "rbf", 100, 0, 100, Some(U)),
    ("GENDER", "sigmoid", 100, 0, 100, Some(U)),
    ("AGE", "linear", 100, 0, 100, Some(U)),
    ("AGE", "poly", 100, 0, 100, Some(U)),
    ("AGE", "rbf", 100, 0, 100, Some(U)),
    ("AGE", "sigmoid", 100, 23, 77, Some(U)),
    ("VET", "linear", 99, 0, 99, Some(U)),
    ("VET", "poly", 99, 0, 99, Some(U)),
    ("VET", "rbf", 99, 0, 99, Some(U)),
    ("VET", "sigmoid", 100, 0, 100, Some(U)),
    ("EDUC", "linear", 99, 0, 99, Some(U)),
    ("EDUC", "poly", 100, 0, 100, Some(U)),
    ("EDUC", "rbf", 100, 0, 100, Some(U)),
    ("EDUC", "sigmoid", 100, 0, 100, Some(U)),
    ("MARSTAT", "linear", 100, 70, 30, Some(U)),
    ("MARSTAT", "poly", 100, 70, 30, Some(U)),
    ("MARSTAT", "rbf", 100, 70, 30, Some(U)),
    ("MARSTAT", "sigmoid", 100, 36, 64, Some(U)),
    ("EMPLOY", "linear", 99, 0, 99, Some(U)),
    ("EMPLOY", "poly", 100, 0, 100, Some(U)),
    ("EMPLOY", "rbf", 100, 0, 100, Some(U)),
    ("EMPLOY", "sigmoid", 100, 0, 100, Some(U)),
    ("RACE", "linear", 100, 0, 100, Some(U)),
    ("RACE", "poly", 100, 0, 100, Some(U)),
    ("RACE", "rbf", 100, 0, 100, Some(U)),
    ("RACE", "sigmoid", 100, 47, 53, None),
    ("ETHNIC", "linear", 100, 0, 100, Some(U)),
    ("ETHNIC", "poly", 100, 0, 100, Some(U)),
    ("ETHNIC", "rbf", 100, 0, 100, Some(U)),
    ("ETHNIC", "sigmoid", 100, 0, 100, Some(U)),
    ("PREG", "linear", 100, 0, 100, Some(U)),
    ("PREG", "poly", 100, 0, 100, Some(U)),
    ("PREG", "rbf", 100, 0, 100, Some(U)),
    ("PREG", "sigmoid", 100, 0, 100, Some(U)),
];

/// Multiclass rows; the unnamed block between AGE and EDUC is VET.
const EQ_OPP_MULTICLASS: &[OppRow] = &[
    ("GENDER", "linear", 69, 37, 32, Some(U)),
    ("GENDER", "poly", 70, 56, 14, Some(F)),
    ("GENDER", "rbf", 69, 52, 17, Some(F)),
    ("GENDER", "sigmoid", 65, 40, 25, Some(U)),
    ("AGE", "linear", 69, 43, 26, Some(U)),
    ("AGE", "poly", 73, 58, 15, Some(F)),
    ("AGE", "rbf", 71, 54, 17, Some(F)),
    ("AGE", "sigmoid", 67, 44, 23, Some(U)),
    ("VET", "linear", 50, 0, 50, Some(U)),
    ("VET", "poly", 63, 0, 63, Some(U)),
    ("VET", "rbf", 50, 0, 50, Some(U)),
    ("VET", "sigmoid", 51, 0, 51, Some(U)),
    ("EDUC", "linear", 55, 23, 32, Some(U)),
    ("EDUC", "poly", 66, 41, 25, Some(U)),
    ("EDUC", "rbf", 63, 38, 25, Some(U)),
    ("EDUC", "sigmoid", 54, 32, 22, Some(U)),
    ("MARSTAT", "linear", 50, 49, 1, Some(F)),
    ("MARSTAT", "poly", 62, 62, 0, Some(F)),
    ("MARSTAT", "rbf", 60, 56, 4, Some(F)),
    ("MARSTAT", "sigmoid", 54, 45, 9, Some(F)),
    ("EMPLOY", "linear", 51, 12, 39, Some(U)),
    ("EMPLOY", "poly", 62, 50, 12, Some(F)),
    ("EMPLOY", "rbf", 60, 38, 22, Some(U)),
    ("EMPLOY", "sigmoid", 51, 25, 26, Some(U)),
    ("RACE", "linear", 50, 48, 2, Some(F)),
    ("RACE", "poly", 60, 62, 2, Some(F)),
    ("RACE", "rbf", 60, 54, 6, Some(F)),
    ("RACE", "sigmoid", 54, 49, 5, Some(F)),
    ("ETHNIC", "linear", 50, 0, 50, Some(U)),
    ("ETHNIC", "poly", 63, 0, 63, Some(U)),
    ("ETHNIC", "sigmoid", 50, 50, 0, Some(F)),
    ("PREG", "linear", 50, 0, 50, Some(U)),
    ("PREG", "poly", 62, 0, 62, Some(U)),
    ("PREG", "rbf", 59, 0, 59, Some(U)),
    ("PREG", "sigmoid", 51, 0, 51, Some(U)),
];

/// (attribute, kernel, TPR difference, FPR difference, combined, verdict)
const EQ_ODDS_BINARY: &[(&str, &str, i128, i128, i128, Verdict)] = &[
    ("GENDER", "linear", 32, 3, 29, U),
    ("GENDER", "poly", 14, 9, 5, F),
    ("GENDER", "rbf", 17, 6, 11, F),
    ("GENDER", "sigmoid", 25, 6, 19, F),
    ("AGE", "linear", 26, 3, 23, U),
    ("AGE", "poly", 15, 5, 10, F),
    ("AGE", "rbf", 16, 8, 8, F),
    ("AGE", "sigmoid", 22, 1, 21, U),
    ("VET", "linear", 51, 22, 29, U),
    ("VET", "poly", 63, 18, 45, U),
    ("VET", "rbf", 60, 16, 44, U),
    ("VET", "sigmoid", 51, 22, 29, U),
    ("EDUC", "linear", 32, 29, 3, F),
    ("EDUC", "poly", 25, 48, 23, U),
    ("EDUC", "rbf", 25, 36, 11, F),
    ("EDUC", "sigmoid", 22, 0, 22, U),
    ("MARSTAT", "linear", 2, 3, 1, F),
    ("MARSTAT", "poly", 1, 2, 1, F),
    ("MARSTAT", "rbf", 4, 1, 3, F),
    ("MARSTAT", "sigmoid", 9, 2, 7, F),
    ("EMPLOY", "linear", 39, 3, 36, U),
    ("EMPLOY", "poly", 12, 4, 8, F),
    ("EMPLOY", "rbf", 22, 4, 18, F),
    ("EMPLOY", "sigmoid", 26, 1, 25, U),
    ("RACE", "linear", 2, 0, 2, F),
    ("RACE", "poly", 0, 2, 2, F),
    ("RACE", "rbf", 6, 3, 3, F),
    ("RACE", "sigmoid", 5, 4, 1, F),
    ("ETHNIC", "linear", 50, 17, 33, U),
    ("ETHNIC", "poly", 63, 13, 50, U),
    ("ETHNIC", "rbf", 59, 16, 43, U),
    ("ETHNIC", "sigmoid", 0, 25, 25, U),
    ("PREG", "linear", 50, 25, 25, U),
    ("PREG", "poly", 62, 19, 43, U),
    ("PREG", "rbf", 59, 21, 38, U),
    ("PREG", "sigmoid", 51, 25, 26, U),
];

/// (block, kernel, max TPR, min TPR, max FPR, min FPR, combined, verdict).
/// Two consecutive blocks carry the same heading; they are told apart here.
const EQ_ODDS_MULTICLASS: &[(&str, &str, i128, i128, i128, i128, i128, Verdict)] = &[
    ("GENDER", "linear", 100, 0, 26, 0, 74, U),
    ("GENDER", "poly", 100, 0, 14, 0, 86, U),
    ("GENDER", "rbf", 100, 0, 12, 0, 88, U),
    ("GENDER", "sigmoid", 100, 0, 29, 0, 71, U),
    ("AGE", "linear", 99, 0, 20, 0, 79, U),
    ("AGE", "poly", 100, 0, 7, 0, 93, U),
    ("AGE", "rbf", 99, 0, 7, 0, 92, U),
    ("AGE", "sigmoid", 100, 27, 28, 0, 45, U),
    ("VET", "linear", 99, 0, 17, 0, 82, U),
    ("VET", "poly", 99, 0, 17, 0, 82, U),
    ("VET", "rbf", 99, 0, 17, 0, 82, U),
    ("VET", "sigmoid", 100, 0, 22, 0, 78, U),
    ("EDUC", "linear", 99, 0, 9, 0, 90, U),
    ("EDUC", "poly", 100, 0, 6, 0, 94, U),
    ("EDUC", "rbf", 100, 0, 7, 0, 93, U),
    ("EDUC", "sigmoid", 100, 0, 31, 0, 69, U),
    ("MARSTAT", "linear", 100, 69, 11, 0, 20, U),
    ("MARSTAT", "poly", 100, 70, 11, 0, 19, F),
    ("MARSTAT", "rbf", 100, 71, 12, 0, 17, F),
    ("MARSTAT", "sigmoid", 100, 29, 34, 0, 37, U),
    ("EMPLOY", "linear", 99, 0, 25, 0, 74, U),
    ("EMPLOY", "poly", 100, 0, 6, 0, 94, U),
    ("EMPLOY", "rbf", 100, 0, 6, 0, 94, U),
    ("EMPLOY", "sigmoid", 100, 0, 89, 0, 11, F),
    ("ETHNIC (first)", "linear", 100, 0, 9, 0, 91, U),
    ("ETHNIC (first)", "poly", 100, 0, 6, 0, 94, U),
    ("ETHNIC (first)", "rbf", 100, 0, 6, 0, 94, U),
    ("ETHNIC (first)", "sigmoid", 100, 34, 28, 0, 38, U),
    ("ETHNIC (second)", "linear", 100, 0, 8, 0, 92, U),
    ("ETHNIC (second)", "poly", 100, 0, 10, 0, 90, U),
    ("ETHNIC (second)", "rbf", 100, 0, 7, 0, 93, U),
    ("ETHNIC (second)", "sigmoid", 100, 0, 100, 0, 0, F),
    ("PREG", "linear", 100, 0, 100, 0, 0, F),
    ("PREG", "poly", 100, 0, 100, 0, 0, F),
    ("PREG", "rbf", 100, 0, 100, 0, 0, F),
    ("PREG", "sigmoid", 100, 0, 100, 0, 0, F),
];

/// Counts over 100 actual positives and 100 actual negatives with the
/// given rates in hundredths.
fn cell(tpr: i128, fpr: i128) -> ClassCounts {
    ClassCounts {
        tp: tpr as u64,
        fn_: (100 - tpr) as u64,
        fp: fpr as u64,
        tn: (100 - fpr) as u64,
    }
}

/// 100 rows of which `rate` hundredths are predicted (and are) in the class.
fn pass(rate: i128) -> ClassCounts {
    ClassCounts {
        tp: rate as u64,
        fn_: (100 - rate) as u64,
        fp: 0,
        tn: 0,
    }
}

fn outcomes(cells: Vec<Vec<ClassCounts>>) -> GroupedOutcomes {
    let labels = (0..cells.len()).map(|s| format!("s{s}")).collect();
    GroupedOutcomes::from_counts(labels, cells).expect("consistent counts")
}

/// Outcome of replaying one group of rows.
#[derive(Debug, Default)]
pub struct Replay {
    pub checked: usize,
    pub failures: Vec<String>,
}

impl Replay {
    fn expect(&mut self, label: String, value: i128, want: i128, verdict: Option<(Verdict, Verdict)>) {
        self.checked += 1;
        if value != want {
            self.failures.push(format!("{label}: got {value}, printed {want}"));
        }
        if let Some((got, printed)) = verdict {
            if got != printed {
                self.failures.push(format!("{label}: verdict {got}, printed {printed}"));
            }
        }
    }

    pub fn merge(&mut self, other: Replay) {
        self.checked += other.checked;
        self.failures.extend(other.failures);
    }
}

pub fn replay_di_multiclass() -> Replay {
    let th = Thresholds::default();
    let mut out = Replay::default();
    for (attr, rows) in DI_MULTICLASS {
        // Correct-prediction rate 1 in one group; the printed ratio in the other.
        let mut high = vec![ClassCounts::default(); 4];
        let mut low = vec![ClassCounts::default(); 4];
        for &(class, di, _) in rows {
            high[class] = pass(100);
            low[class] = pass(di);
        }
        let per_class = fairness::disparate_impact_multiclass(&outcomes(vec![low, high]), &th).unwrap();
        for &(class, di, verdict) in rows {
            let r = &per_class[class];
            let value = hundredths(r.exact.as_ref().unwrap());
            out.expect(format!("DI {attr} class {class}"), value, di, verdict.map(|v| (r.verdict, v)));
        }
    }
    out
}

pub fn replay_spd_binary() -> Replay {
    let th = Thresholds::default();
    let mut out = Replay::default();
    for &(attr, a, b, diff) in SPD_BINARY {
        let g = outcomes(vec![vec![pass(a)], vec![pass(b)]]);
        let r = fairness::statistical_parity_difference(&g, 0, 1, 0, &th).unwrap();
        out.expect(format!("SPD {attr}"), hundredths(r.exact.as_ref().unwrap()), diff, None);
    }
    out
}

pub fn replay_spd_multiclass() -> Replay {
    let th = Thresholds::default();
    let mut out = Replay::default();
    for (attr, rows, satisfied) in SPD_MULTICLASS {
        let mut u = vec![ClassCounts::default(); 4];
        let mut p = vec![ClassCounts::default(); 4];
        for &(class, spd, _) in rows {
            u[class] = pass(spd);
            p[class] = pass(0);
        }
        let r = fairness::spd_multiclass(&outcomes(vec![u, p]), 0, 1, &th).unwrap();
        for &(class, spd, threshold) in rows {
            let m = &r.per_class[class];
            out.expect(
                format!("SPD {attr} class {class}"),
                hundredths(m.exact.as_ref().unwrap()),
                spd,
                None,
            );
            let t = m.max_fair_threshold.map_or(-1, |t| (t * 100.0).round() as i128);
            out.expect(format!("SPD {attr} class {class} max threshold"), t, threshold, None);
        }
        out.expect(
            format!("SPD {attr} satisfied"),
            i128::from(r.satisfied),
            i128::from(*satisfied),
            None,
        );
    }
    out
}

pub fn replay_eq_opp_binary() -> Replay {
    let th = Thresholds::default();
    let mut out = Replay::default();
    for &(attr, kernel, max, min, diff, verdict) in EQ_OPP_BINARY {
        let g = outcomes(vec![vec![cell(max, 0)], vec![cell(min, 0)]]);
        let r = fairness::equal_opportunity_diff(&g, 0, &th).unwrap();
        out.expect(
            format!("EqOpp {attr} {kernel}"),
            hundredths(r.exact.as_ref().unwrap()),
            diff,
            verdict.map(|v| (r.verdict, v)),
        );
    }
    out
}

pub fn replay_eq_opp_multiclass() -> Replay {
    let th = Thresholds::default();
    let mut out = Replay::default();
    for &(attr, kernel, max, min, diff, verdict) in EQ_OPP_MULTICLASS {
        let g = outcomes(vec![vec![cell(max, 0), cell(max, 0)], vec![cell(max, 0), cell(min, 0)]]);
        let r = fairness::equal_opportunity_multiclass(&g, &th).unwrap();
        out.expect(
            format!("EqOpp multiclass {attr} {kernel}"),
            hundredths(r.exact.as_ref().unwrap()),
            diff,
            verdict.map(|v| (r.verdict, v)),
        );
    }
    out
}

pub fn replay_eq_odds_binary() -> Replay {
    let th = Thresholds::default();
    let mut out = Replay::default();
    for &(attr, kernel, tpr, fpr, diff, verdict) in EQ_ODDS_BINARY {
        let g = outcomes(vec![vec![cell(tpr, fpr)], vec![cell(0, 0)]]);
        let r = fairness::equalized_odds_diff(&g, 0, &th).unwrap();
        out.expect(
            format!("EqOdds {attr} {kernel}"),
            hundredths(r.exact.as_ref().unwrap()),
            diff,
            Some((r.verdict, verdict)),
        );
    }
    out
}

pub fn replay_eq_odds_multiclass() -> Replay {
    let th = Thresholds::default();
    let mut out = Replay::default();
    for &(attr, kernel, tmax, tmin, fmax, fmin, diff, verdict) in EQ_ODDS_MULTICLASS {
        let g = outcomes(vec![
            vec![cell(tmax, fmax), cell(tmax, fmax)],
            vec![cell(tmin, fmin), cell(tmin, fmin)],
        ]);
        let r = fairness::equalized_odds_multiclass(&g, &th).unwrap();
        out.expect(
            format!("EqOdds multiclass {attr} {kernel}"),
            hundredths(r.exact.as_ref().unwrap()),
            diff,
            Some((r.verdict, verdict)),
        );
    }
    out
}

pub fn replay_all() -> Replay {
    let mut out = Replay::default();
    for r in [
        replay_di_multiclass(),
        replay_spd_binary(),
        replay_spd_multiclass(),
        replay_eq_opp_binary(),
        replay_eq_opp_multiclass(),
        replay_eq_odds_binary(),
        replay_eq_odds_multiclass(),
    ] {
        out.merge(r);
    }
    out
}
