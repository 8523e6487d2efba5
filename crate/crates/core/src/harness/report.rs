use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::config::budget_label;

/// One evaluated (method, budget) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub budget: f64,
    pub seeds: usize,
    pub cost: f64,
    /// Mean infected share of the graph, in percent.
    pub infected_pct: f64,
    pub stddev_pct: f64,
    /// Wall time of the selection job; not part of the deterministic outputs.
    #[serde(skip)]
    pub wall_time_s: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

pub const CSV_HEADER: &str = "method,budget,seeds,cost,infected_pct,stddev_pct";

impl ResultTable {
    pub fn validate(&self) -> Result<()> {
        for r in &self.rows {
            if !(0.0..=100.0).contains(&r.infected_pct) {
                return Err(Error::Invariant(format!(
                    "{} at {} reports {}% infected",
                    r.method, r.budget, r.infected_pct
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, method: &str, budget: f64) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && (r.budget - budget).abs() < 1e-12)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.4},{:.4}",
                r.method, r.budget, r.seeds, r.cost, r.infected_pct, r.stddev_pct
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(CSV_HEADER) {
            return Err(Error::Format("unexpected result table header".into()));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Parse {
                line: i + 2,
                message: format!("malformed row `{line}`"),
            };
            if f.len() != 6 {
                return Err(bad());
            }
            rows.push(ResultRow {
                method: f[0].to_string(),
                budget: f[1].parse().map_err(|_| bad())?,
                seeds: f[2].parse().map_err(|_| bad())?,
                cost: f[3].parse().map_err(|_| bad())?,
                infected_pct: f[4].parse().map_err(|_| bad())?,
                stddev_pct: f[5].parse().map_err(|_| bad())?,
                wall_time_s: None,
            });
        }
        Ok(ResultTable { rows })
    }

    /// Methods as rows, budgets as columns, cells `mean ± stddev`.
    pub fn to_text(&self) -> String {
        let mut methods: Vec<&str> = Vec::new();
        let mut budgets: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !methods.contains(&r.method.as_str()) {
                methods.push(&r.method);
            }
            if !budgets.iter().any(|b| (b - r.budget).abs() < 1e-12) {
                budgets.push(r.budget);
            }
        }
        let mut header = vec!["method".to_string()];
        header.extend(budgets.iter().map(|&b| budget_label(b)));
        let mut grid = vec![header];
        for m in &methods {
            let mut line = vec![m.to_string()];
            for &b in &budgets {
                line.push(match self.get(m, b) {
                    Some(r) => format!("{:.1} ± {:.1}", r.infected_pct, r.stddev_pct),
                    None => "-".into(),
                });
            }
            grid.push(line);
        }
        let cols = grid[0].len();
        let widths: Vec<usize> = (0..cols)
            .map(|c| grid.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, line) in grid.iter().enumerate() {
            let cells: Vec<String> = line
                .iter()
                .enumerate()
                .map(|(c, s)| {
                    let pad = widths[c] - s.chars().count();
                    if c == 0 {
                        format!("{s}{}", " ".repeat(pad))
                    } else {
                        format!("{}{s}", " ".repeat(pad))
                    }
                })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
            if i == 0 {
                let total: usize = widths.iter().sum::<usize>() + 2 * (cols - 1);
                out.push_str(&"-".repeat(total));
                out.push('\n');
            }
        }
        out
    }

    /// `method,budget,wall_time_s` for rows with a recorded time.
    pub fn wall_time_csv(&self) -> String {
        let mut out = String::from("method,budget,wall_time_s\n");
        for r in &self.rows {
            if let Some(t) = r.wall_time_s {
                let _ = writeln!(out, "{},{},{t:.6}", r.method, r.budget);
            }
        }
        out
    }
}
