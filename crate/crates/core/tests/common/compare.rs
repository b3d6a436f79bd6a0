//! Library metrics against the counting oracle, metric by metric.

use std::collections::BTreeMap;

use fairkit::dataset::SensitiveGroups;
use fairkit::fairness::{self, AuditOptions, ClassMode, FairnessError, GroupedOutcomes, MetricEntry, MetricResult, Thresholds};
use fairkit::reweight::combinations;

use super::*;

#[derive(Clone, Copy, PartialEq)]
pub enum Kind {
    Difference,
    Ratio,
}

/// Checks value, verdict and reported threshold of one metric.
pub fn check(label: &str, lib: &Result<MetricResult, FairnessError>, want: &Outcome, kind: Kind) -> Result<(), String> {
    let got = Outcome::of(lib);
    if &got != want {
        return Err(format!("{label}: library {got:?}, oracle {want:?}"));
    }
    let Ok(m) = lib else { return Ok(()) };
    let verdict = match kind {
        Kind::Difference => difference_verdict(&want.value().unwrap()),
        Kind::Ratio => ratio_verdict(want),
    };
    if m.verdict != verdict {
        return Err(format!("{label}: verdict {:?}, expected {verdict:?}", m.verdict));
    }
    let threshold = m.max_fair_threshold.map(|t| (t * 100.0).round() as i128);
    let expected = match kind {
        Kind::Difference => oracle_max_threshold(&want.value().unwrap()),
        Kind::Ratio => None,
    };
    if threshold != expected {
        return Err(format!("{label}: max threshold {threshold:?}, expected {expected:?}"));
    }
    Ok(())
}

fn entry_result(e: Option<&MetricEntry>) -> Result<MetricResult, FairnessError> {
    match e {
        Some(MetricEntry::Computed(m)) => Ok(m.clone()),
        _ => Err(FairnessError::ZeroMaxRate),
    }
}

/// Every standalone metric on up to four subgroups.
pub fn standalone(d: &RandomAudit) -> Result<usize, String> {
    let th = Thresholds::default();
    let rows = Rows {
        y_true: &d.y_true,
        y_pred: &d.y_pred,
        n_classes: d.n_classes,
    };
    let labels: Vec<String> = (0..d.n_groups).map(|s| format!("g{s}")).collect();
    let g = GroupedOutcomes::from_rows(&d.y_true, &d.y_pred, &d.groups, labels.clone(), d.n_classes, None)
        .map_err(|e| e.to_string())?;
    let gc = GroupedOutcomes::from_rows(&d.y_true, &d.y_pred, &d.groups, labels, d.n_classes, Some(&d.mask))
        .map_err(|e| e.to_string())?;
    let parts = partition(&d.groups, d.n_groups);
    let masked: Vec<Vec<usize>> = parts
        .iter()
        .map(|p| p.iter().copied().filter(|&i| d.mask[i]).collect())
        .collect();
    let all: Vec<usize> = (0..d.n_classes).collect();
    let mut n = 0;
    let mut run = |label: String, lib: Result<MetricResult, FairnessError>, want: Outcome, kind: Kind| {
        n += 1;
        check(&label, &lib, &want, kind)
    };

    for pos in 0..d.n_classes {
        for u in 0..d.n_groups {
            for p in 0..d.n_groups {
                if u == p {
                    continue;
                }
                run(
                    format!("di u={u} p={p} c={pos}"),
                    fairness::disparate_impact(&g, u, p, pos, &th),
                    oracle_di(&rows, &parts[u], &parts[p], pos),
                    Kind::Ratio,
                )?;
                run(
                    format!("spd u={u} p={p} c={pos}"),
                    fairness::statistical_parity_difference(&g, u, p, pos, &th),
                    oracle_spd(&rows, &parts[u], &parts[p], pos),
                    Kind::Difference,
                )?;
            }
        }
        run(
            format!("eq_opp c={pos}"),
            fairness::equal_opportunity_diff(&g, pos, &th),
            oracle_eq_opp(&rows, &parts, &[pos]),
            Kind::Difference,
        )?;
        run(
            format!("eq_odds c={pos}"),
            fairness::equalized_odds_diff(&g, pos, &th),
            oracle_eq_odds(&rows, &parts, &[pos]),
            Kind::Difference,
        )?;
        run(
            format!("dpr c={pos}"),
            fairness::demographic_parity_ratio(&g, ClassMode::Binary(pos), &th),
            oracle_pass_ratio(&rows, &parts, &[pos]),
            Kind::Ratio,
        )?;
        run(
            format!("cspr c={pos}"),
            fairness::conditional_statistical_parity_ratio(&gc, ClassMode::Binary(pos), &th),
            oracle_pass_ratio(&rows, &masked, &[pos]),
            Kind::Ratio,
        )?;
        run(
            format!("eoppr c={pos}"),
            fairness::equal_opportunity_ratio(&g, ClassMode::Binary(pos), &th),
            oracle_eopp_ratio(&rows, &parts, &[pos]),
            Kind::Ratio,
        )?;
    }

    let di = fairness::disparate_impact_multiclass(&g, &th);
    let want = oracle_di_multiclass(&rows, &parts);
    match di {
        Ok(per_class) => {
            for (c, r) in per_class.into_iter().enumerate() {
                run(format!("di multiclass c={c}"), Ok(r), want[c].clone(), Kind::Ratio)?;
            }
        }
        Err(e) => {
            if want.iter().any(|w| w != &Outcome::Undefined) {
                return Err(format!("di multiclass: library error {e}, oracle {want:?}"));
            }
        }
    }
    for u in 0..d.n_groups {
        for p in 0..d.n_groups {
            if u == p {
                continue;
            }
            match fairness::spd_multiclass(&g, u, p, &th) {
                Ok(spd) => {
                    let mut any_zero = false;
                    for (c, r) in spd.per_class.into_iter().enumerate() {
                        let want = oracle_spd(&rows, &parts[u], &parts[p], c);
                        any_zero |= want.value().is_some_and(|v| hundredths(&v) == 0);
                        run(format!("spd multiclass u={u} p={p} c={c}"), Ok(r), want, Kind::Difference)?;
                    }
                    if spd.satisfied != any_zero {
                        return Err(format!("spd satisfied u={u} p={p}: {} vs {any_zero}", spd.satisfied));
                    }
                }
                Err(_) => {
                    if parts[u].is_empty() || parts[p].is_empty() {
                        continue;
                    }
                    return Err(format!("spd multiclass u={u} p={p} failed on non-empty groups"));
                }
            }
        }
    }
    run(
        "eq_opp multiclass".into(),
        fairness::equal_opportunity_multiclass(&g, &th),
        oracle_eq_opp(&rows, &parts, &all),
        Kind::Difference,
    )?;
    run(
        "eq_odds multiclass".into(),
        fairness::equalized_odds_multiclass(&g, &th),
        oracle_eq_odds(&rows, &parts, &all),
        Kind::Difference,
    )?;
    run(
        "dpr multiclass".into(),
        fairness::demographic_parity_ratio(&g, ClassMode::Multiclass, &th),
        oracle_pass_ratio(&rows, &parts, &all),
        Kind::Ratio,
    )?;
    run(
        "cspr multiclass".into(),
        fairness::conditional_statistical_parity_ratio(&gc, ClassMode::Multiclass, &th),
        oracle_pass_ratio(&rows, &masked, &all),
        Kind::Ratio,
    )?;
    run(
        "eoddr".into(),
        fairness::equalized_odds_ratio_multiclass(&g, &th),
        oracle_pass_ratio(&rows, &parts, &all),
        Kind::Ratio,
    )?;
    run(
        "eoppr multiclass".into(),
        fairness::equal_opportunity_ratio(&g, ClassMode::Multiclass, &th),
        oracle_eopp_ratio(&rows, &parts, &all),
        Kind::Ratio,
    )?;

    // Treat each subgroup as its own family member; a second family splits
    // rows by parity of their index so the two families differ.
    let parity = partition(&(0..d.y_true.len()).map(|i| i % 2).collect::<Vec<_>>(), 2);
    let families = vec![
        ("by-group".to_string(), g.clone()),
        (
            "by-parity".to_string(),
            GroupedOutcomes::from_rows(
                &d.y_true,
                &d.y_pred,
                &(0..d.y_true.len()).map(|i| i % 2).collect::<Vec<_>>(),
                vec!["even".into(), "odd".into()],
                d.n_classes,
                None,
            )
            .map_err(|e| e.to_string())?,
        ),
    ];
    run(
        "worst-case di".into(),
        fairness::worst_case_disparate_impact(&families, ClassMode::Multiclass, &th),
        oracle_worst_case_di(&rows, &[parts.clone(), parity], &all),
        Kind::Ratio,
    )?;
    Ok(n)
}

/// Random binary attributes for an audit.
pub fn random_groups(rng: &mut ChaCha8Rng, n_rows: usize, n_attrs: usize) -> SensitiveGroups {
    use rand::Rng;
    SensitiveGroups {
        names: (0..n_attrs).map(|a| format!("A{a}")).collect(),
        privileged: (0..n_attrs).map(|_| rng.gen_range(0..2)).collect(),
        bucket_labels: (0..n_attrs).map(|_| ["lo".to_string(), "hi".to_string()]).collect(),
        values: (0..n_attrs)
            .map(|_| {
                let p = rng.gen_range(0.1..0.9);
                (0..n_rows).map(|_| u8::from(rng.gen_bool(p))).collect()
            })
            .collect(),
    }
}

/// Cells of every `order`-way tuple, empty cells dropped.
fn family(groups: &SensitiveGroups, order: usize, keep: impl Fn(usize) -> bool) -> Vec<Vec<usize>> {
    let n = groups.n_rows();
    let mut out = Vec::new();
    for tuple in combinations(groups.names.len(), order) {
        let mut cells: BTreeMap<Vec<u8>, Vec<usize>> = BTreeMap::new();
        for i in (0..n).filter(|&i| keep(i)) {
            let key: Vec<u8> = tuple.iter().map(|&a| groups.values[a][i]).collect();
            cells.entry(key).or_default().push(i);
        }
        out.extend(cells.into_values());
    }
    out
}

/// The full audit of a random dataset against the oracle.
pub fn full_audit(d: &RandomAudit, groups: &SensitiveGroups) -> Result<usize, String> {
    let opts = AuditOptions::default();
    let report = fairness::audit(&d.y_true, &d.y_pred, d.n_classes, groups, Some(&d.mask), &opts)
        .map_err(|e| e.to_string())?;
    let rows = Rows {
        y_true: &d.y_true,
        y_pred: &d.y_pred,
        n_classes: d.n_classes,
    };
    let pos = opts.positive_class;
    let binary = d.n_classes == 2;
    let classes: Vec<usize> = if binary { vec![pos] } else { (0..d.n_classes).collect() };
    let all: Vec<usize> = (0..d.n_classes).collect();
    let mut n = 0;

    for (a, name) in groups.names.iter().enumerate() {
        let key: Vec<usize> = groups.values[a].iter().map(|&v| v as usize).collect();
        let parts = partition(&key, 2);
        let masked: Vec<Vec<usize>> = parts
            .iter()
            .map(|p| p.iter().copied().filter(|&i| d.mask[i]).collect())
            .collect();
        let privileged = groups.privileged[a] as usize;
        let (u, p) = (&parts[1 - privileged], &parts[privileged]);
        let metrics = &report.attributes[name];
        let mut expect: Vec<(String, Outcome, Kind)> = vec![
            ("demographic_parity_ratio".into(), oracle_pass_ratio(&rows, &parts, &classes), Kind::Ratio),
            ("equal_opportunity_ratio".into(), oracle_eopp_ratio(&rows, &parts, &classes), Kind::Ratio),
            ("equalized_odds_ratio".into(), oracle_pass_ratio(&rows, &parts, &all), Kind::Ratio),
            (
                "conditional_statistical_parity_ratio".into(),
                oracle_pass_ratio(&rows, &masked, &classes),
                Kind::Ratio,
            ),
            (
                "equal_opportunity_difference".into(),
                oracle_eq_opp(&rows, &parts, &classes),
                Kind::Difference,
            ),
            (
                "equalized_odds_difference".into(),
                oracle_eq_odds(&rows, &parts, &classes),
                Kind::Difference,
            ),
        ];
        if binary {
            expect.push(("disparate_impact".into(), oracle_di(&rows, u, p, pos), Kind::Ratio));
            expect.push((
                "statistical_parity_difference".into(),
                oracle_spd(&rows, u, p, pos),
                Kind::Difference,
            ));
        } else {
            let di = oracle_di_multiclass(&rows, &parts);
            if di.iter().all(|o| o == &Outcome::Undefined) {
                expect.push(("disparate_impact".into(), Outcome::Undefined, Kind::Ratio));
            } else {
                for (c, o) in di.into_iter().enumerate() {
                    expect.push((format!("disparate_impact[class={c}]"), o, Kind::Ratio));
                }
            }
            if u.is_empty() || p.is_empty() {
                expect.push(("statistical_parity_difference".into(), Outcome::Undefined, Kind::Difference));
            } else {
                let mut any_zero = false;
                for c in 0..d.n_classes {
                    let o = oracle_spd(&rows, u, p, c);
                    any_zero |= hundredths(&o.value().unwrap()) == 0;
                    expect.push((format!("statistical_parity_difference[class={c}]"), o, Kind::Difference));
                }
                if report.spd_satisfied.get(name) != Some(&any_zero) {
                    return Err(format!("{name}: spd satisfied flag differs"));
                }
            }
        }
        if metrics.len() != expect.len() {
            return Err(format!(
                "{name}: {} metrics reported, {} expected: {:?}",
                metrics.len(),
                expect.len(),
                metrics.keys().collect::<Vec<_>>()
            ));
        }
        for (metric, want, kind) in expect {
            n += 1;
            check(&format!("{name}/{metric}"), &entry_result(metrics.get(&metric)), &want, kind)?;
        }
    }

    let m = groups.names.len();
    if m >= 2 {
        let orders: Vec<usize> = [2, 3].into_iter().filter(|&k| k <= m).collect();
        let fams: Vec<Vec<Vec<usize>>> = orders.iter().map(|&k| family(groups, k, |_| true)).collect();
        let cond: Vec<Vec<usize>> = orders
            .iter()
            .flat_map(|&k| family(groups, k, |i| d.mask[i]))
            .collect();
        let pooled: Vec<Vec<usize>> = fams.iter().flatten().cloned().collect();
        let inter = &report.intersectional;
        let expect = [
            ("demographic_parity_ratio", oracle_pass_ratio(&rows, &pooled, &classes)),
            ("worst_case_disparate_impact", oracle_worst_case_di(&rows, &fams, &classes)),
            ("equal_opportunity_ratio", oracle_eopp_ratio(&rows, &pooled, &classes)),
            ("equalized_odds_ratio", oracle_pass_ratio(&rows, &pooled, &all)),
            ("conditional_statistical_parity_ratio", oracle_pass_ratio(&rows, &cond, &classes)),
        ];
        for (metric, want) in expect {
            n += 1;
            check(
                &format!("intersectional/{metric}"),
                &entry_result(inter.get(metric)),
                &want,
                Kind::Ratio,
            )?;
        }
    }
    Ok(n)
}
