//! Evaluation report assembly and emission: per-(mode, defense) accuracy
//! rows over the attack suite, CSV/JSON serialization, and plot-ready CSV
//! extraction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One report cell: an accuracy in percent, or the error that produced no
/// value. Failed cells render as `ERR` and never abort the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Value(f64),
    Failed { error: String },
}

impl Cell {
    pub fn value(&self) -> Option<f64> {
        match self {
            Cell::Value(v) => Some(*v),
            Cell::Failed { .. } => None,
        }
    }

    fn render(&self) -> String {
        match self {
            Cell::Value(v) => format!("{v:.4}"),
            Cell::Failed { .. } => "ERR".to_string(),
        }
    }
}

impl<E: std::fmt::Display> From<std::result::Result<f64, E>> for Cell {
    fn from(r: std::result::Result<f64, E>) -> Self {
        match r {
            Ok(v) => Cell::Value(v),
            Err(e) => Cell::Failed { error: e.to_string() },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub mode: String,
    pub defense: String,
    pub clean: Cell,
    /// `(attack label, accuracy)` in fixed suite order.
    pub attacks: Vec<(String, Cell)>,
    /// Mean of the attack columns, excluding clean.
    pub avg: Cell,
}

impl ReportRow {
    pub fn new(mode: String, defense: String, clean: Cell, attacks: Vec<(String, Cell)>) -> Self {
        let values: Vec<f64> = attacks.iter().filter_map(|(_, c)| c.value()).collect();
        let avg = if values.is_empty() {
            Cell::Failed { error: "no attack cells".into() }
        } else if values.len() < attacks.len() {
            Cell::Failed { error: "attack cells missing".into() }
        } else {
            Cell::Value(values.iter().sum::<f64>() / values.len() as f64)
        };
        ReportRow {
            mode,
            defense,
            clean,
            attacks,
            avg,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub attack_order: Vec<String>,
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("mode,defense,clean");
        for a in &self.attack_order {
            out.push(',');
            out.push_str(a);
        }
        out.push_str(",avg\n");
        for row in &self.rows {
            out.push_str(&row.mode);
            out.push(',');
            out.push_str(&row.defense);
            out.push(',');
            out.push_str(&row.clean.render());
            for (_, cell) in &row.attacks {
                out.push(',');
                out.push_str(&cell.render());
            }
            out.push(',');
            out.push_str(&row.avg.render());
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::data(format!("bad report JSON: {e}")))
    }

    pub fn row(&self, mode: &str, defense: &str) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.mode == mode && r.defense == defense)
    }

    /// Plot-ready CSV of per-attack accuracies: one row per attack, one
    /// column per (mode, defense) pair.
    pub fn attack_bars_csv(&self) -> String {
        let mut out = String::from("attack");
        for row in &self.rows {
            out.push(',');
            out.push_str(&format!("{}_{}", row.mode, row.defense));
        }
        out.push('\n');
        for (i, attack) in self.attack_order.iter().enumerate() {
            out.push_str(attack);
            for row in &self.rows {
                out.push(',');
                out.push_str(&row.attacks[i].1.render());
            }
            out.push('\n');
        }
        out
    }
}

/// Clean-accuracy sweep over the consistency-weight grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub modes: Vec<String>,
    pub rows: Vec<SweepRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    /// Clean accuracy per mode, in `modes` order.
    pub clean_acc: Vec<f64>,
    /// True exactly once: the row whose primary-mode clean accuracy is
    /// highest (ties resolve to the smaller lambda).
    pub best: bool,
}

impl SweepResult {
    pub fn new(modes: Vec<String>, lambdas: &[f64], clean_acc: Vec<Vec<f64>>) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(Error::data("empty sweep"));
        }
        let mut best_idx = 0;
        for (i, row) in clean_acc.iter().enumerate() {
            if row[0] > clean_acc[best_idx][0] {
                best_idx = i;
            }
        }
        let rows = lambdas
            .iter()
            .zip(clean_acc)
            .enumerate()
            .map(|(i, (l, accs))| SweepRow {
                lambda: *l,
                clean_acc: accs,
                best: i == best_idx,
            })
            .collect();
        Ok(SweepResult { modes, rows })
    }

    pub fn best_lambda(&self) -> f64 {
        self.rows.iter().find(|r| r.best).map(|r| r.lambda).unwrap()
    }

    /// Plot-ready CSV: a lambda column plus one clean-accuracy column per
    /// mode.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda");
        for m in &self.modes {
            out.push(',');
            out.push_str(m);
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!("{}", row.lambda));
            for v in &row.clean_acc {
                out.push_str(&format!(",{v:.4}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sweep serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::data(format!("bad sweep JSON: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_report() -> EvalReport {
        let attacks = vec!["fgsm".to_string(), "bim".to_string()];
        let rows = vec![
            ReportRow::new(
                "vanilla".into(),
                "none".into(),
                Cell::Value(95.0),
                vec![
                    ("fgsm".into(), Cell::Value(30.0)),
                    ("bim".into(), Cell::Value(20.0)),
                ],
            ),
            ReportRow::new(
                "mapr".into(),
                "sor".into(),
                Cell::Value(94.0),
                vec![
                    ("fgsm".into(), Cell::Value(60.0)),
                    ("bim".into(), Cell::Failed { error: "boom".into() }),
                ],
            ),
        ];
        EvalReport {
            attack_order: attacks,
            rows,
        }
    }

    #[test]
    fn avg_is_mean_of_attack_cells() {
        let r = sample_report();
        assert_eq!(r.rows[0].avg, Cell::Value(25.0));
        // a failed attack cell poisons the average
        assert!(r.rows[1].avg.value().is_none());
    }

    #[test]
    fn csv_renders_err_cells() {
        let csv = sample_report().to_csv();
        assert!(csv.starts_with("mode,defense,clean,fgsm,bim,avg\n"));
        assert!(csv.contains("vanilla,none,95.0000,30.0000,20.0000,25.0000"));
        assert!(csv.contains("ERR"));
    }

    #[test]
    fn json_round_trip() {
        let r = sample_report();
        let back = EvalReport::from_json(&r.to_json()).unwrap();
        assert_eq!(back.rows.len(), 2);
        assert_eq!(back.rows[0].avg, Cell::Value(25.0));
        assert!(matches!(back.rows[1].attacks[1].1, Cell::Failed { .. }));
    }

    #[test]
    fn sweep_flags_best_exactly_once_and_csv_has_modes_plus_one_columns() {
        let sweep = SweepResult::new(
            vec!["mapr".into(), "lip_only".into()],
            &[0.1, 0.25, 0.5],
            vec![vec![90.0, 88.0], vec![93.0, 87.0], vec![93.0, 91.0]],
        )
        .unwrap();
        assert_eq!(sweep.rows.iter().filter(|r| r.best).count(), 1);
        // ties resolve to the smaller lambda
        assert_eq!(sweep.best_lambda(), 0.25);
        let csv = sweep.to_csv();
        let header = csv.lines().next().unwrap();
        assert_eq!(header.split(',').count(), sweep.modes.len() + 1);
    }

    #[test]
    fn sweep_rejects_empty() {
        assert!(SweepResult::new(vec!["mapr".into()], &[], vec![]).is_err());
    }

    #[test]
    fn emission_is_reproducible_bytes() {
        let r = sample_report();
        assert_eq!(r.to_csv(), r.to_csv());
        assert_eq!(r.to_json(), r.to_json());
        assert_eq!(r.attack_bars_csv(), r.attack_bars_csv());
    }
}
