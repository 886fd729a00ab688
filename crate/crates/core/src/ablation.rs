//! Component ablation: the same run with loss terms and the assigner
//! switched on one group at a time.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, UdaMethod};
use crate::data::{EvalSet, TrainingSet};
use crate::error::Result;
use crate::metrics::MetricSummary;
use crate::par::Exec;
use crate::trainer::{evaluate, train};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AblationRow {
    /// Classification loss alone.
    Baseline,
    /// Adaptation against uniformly drawn pixel features.
    Adaptation,
    /// Adaptation against the assigned true target set.
    AdaptationTsa,
    /// Universum term with the assigner, no adaptation.
    UniversumTsa,
    Full,
}

impl AblationRow {
    pub const ALL: [AblationRow; 5] = [
        AblationRow::Baseline,
        AblationRow::Adaptation,
        AblationRow::AdaptationTsa,
        AblationRow::UniversumTsa,
        AblationRow::Full,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AblationRow::Baseline => "L_c",
            AblationRow::Adaptation => "L_c+L_d",
            AblationRow::AdaptationTsa => "L_c+L_d+TSA",
            AblationRow::UniversumTsa => "L_c+L_u+TSA",
            AblationRow::Full => "L_c+L_d+L_u+TSA",
        }
    }

    /// `base` with this row's terms switched on. The adaptation method and
    /// both weights come from `base`; rows only zero them out.
    pub fn configure(self, base: &RunConfig) -> RunConfig {
        let mut cfg = base.clone();
        let uda = if base.uda_method == UdaMethod::None { UdaMethod::Mmd } else { base.uda_method };
        let (l1, l2, tsa) = match self {
            AblationRow::Baseline => (0.0, 0.0, false),
            AblationRow::Adaptation => (base.lambda1, 0.0, false),
            AblationRow::AdaptationTsa => (base.lambda1, 0.0, true),
            AblationRow::UniversumTsa => (0.0, base.lambda2, true),
            AblationRow::Full => (base.lambda1, base.lambda2, true),
        };
        cfg.lambda1 = l1;
        cfg.lambda2 = l2;
        cfg.tsa = tsa;
        cfg.uda_method = if l1 > 0.0 { uda } else { UdaMethod::None };
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub row: AblationRow,
    pub summary: MetricSummary,
}

/// Train and evaluate every row with the seed of `base`.
pub fn run_ablation(
    base: &RunConfig,
    rows: &[AblationRow],
    train_set: &TrainingSet,
    eval_set: &EvalSet,
    exec: Exec,
) -> Result<Vec<AblationResult>> {
    let mut out = Vec::with_capacity(rows.len());
    for &row in rows {
        let cfg = row.configure(base);
        log::info!("ablation row {}", row.label());
        let state = train(cfg, train_set, exec, &mut |_| {})?;
        let (summary, _) = evaluate(&state, eval_set)?;
        out.push(AblationResult { row, summary });
    }
    Ok(out)
}

/// `row,pxap,piou` with six decimals; absent metrics are left empty.
pub fn ablation_csv(results: &[AblationResult]) -> String {
    let mut s = String::from("row,pxap,piou\n");
    let fmt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
    for r in results {
        let _ = writeln!(s, "{},{},{}", r.row.label(), fmt(r.summary.pxap), fmt(r.summary.piou));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_toggle_terms() {
        let base = RunConfig::default();
        let b = AblationRow::Baseline.configure(&base);
        assert_eq!((b.lambda1, b.lambda2, b.tsa, b.uda_method), (0.0, 0.0, false, UdaMethod::None));
        let a = AblationRow::Adaptation.configure(&base);
        assert_eq!((a.lambda1, a.lambda2, a.tsa, a.uda_method), (base.lambda1, 0.0, false, UdaMethod::Mmd));
        let u = AblationRow::UniversumTsa.configure(&base);
        assert_eq!((u.lambda1, u.lambda2, u.tsa), (0.0, base.lambda2, true));
        let f = AblationRow::Full.configure(&base);
        assert_eq!((f.lambda1, f.lambda2, f.tsa), (base.lambda1, base.lambda2, true));
        let dann = RunConfig { uda_method: UdaMethod::Dann, ..base };
        assert_eq!(AblationRow::Full.configure(&dann).uda_method, UdaMethod::Dann);
    }

    #[test]
    fn labels_are_distinct() {
        let mut labels: Vec<_> = AblationRow::ALL.iter().map(|r| r.label()).collect();
        labels.dedup();
        assert_eq!(labels.len(), 5);
    }
}
