//! Tidy CSV tables and plain-text summaries.

use std::path::Path;

use restraj_core::dynamics::Trajectory;
use restraj_core::planner::{AblationEntry, ActiveLearnReport, LatencyStats, SavingsRow};
use restraj_core::prior::ProblemSpec;

/// Preformatted cells; every row has `header.len()` cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<Vec<u8>, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.into_inner().map_err(|e| csv::Error::from(e.into_error()))
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let bytes = self.to_csv().map_err(std::io::Error::other)?;
        std::fs::write(path, bytes)
    }

    /// Copy with every fractional numeric cell shortened for display.
    pub fn rounded(&self) -> Table {
        let cell = |c: &String| match c.parse::<f64>() {
            Ok(x) if c.contains(['.', 'e']) => short(x),
            _ => c.clone(),
        };
        Table {
            header: self.header.clone(),
            rows: self.rows.iter().map(|r| r.iter().map(cell).collect()).collect(),
        }
    }

    /// Left-aligned columns separated by two spaces.
    pub fn render(&self) -> String {
        let mut widths: Vec<usize> = self.header.iter().map(String::len).collect();
        for row in &self.rows {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let line = |cells: &[String]| {
            let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            padded.join("  ").trim_end().to_string()
        };
        let mut out = line(&self.header);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&line(row));
            out.push('\n');
        }
        out
    }
}

/// Shortest round-trip representation; deterministic across runs.
pub fn num(x: f64) -> String {
    format!("{x}")
}

/// Fixed-precision cell for summaries.
pub fn short(x: f64) -> String {
    if x.abs() >= 1e-3 || x == 0.0 {
        format!("{x:.3}")
    } else {
        format!("{x:.2e}")
    }
}

fn spec_header(dof: usize) -> Vec<String> {
    let mut h = vec!["t_f".to_string()];
    h.extend((1..=dof).map(|j| format!("q0_{j}")));
    h.extend((1..=dof).map(|j| format!("qf_{j}")));
    h
}

fn spec_cells(spec: &ProblemSpec) -> Vec<String> {
    spec.features().into_iter().map(num).collect()
}

/// Long-format trajectories: one row per `(variant, point)`.
pub fn trajectory_table(dof: usize, variants: &[(&str, &Trajectory)]) -> Table {
    let mut header = vec!["variant".to_string(), "t".to_string()];
    for prefix in ["q", "v", "u"] {
        header.extend((1..=dof).map(|j| format!("{prefix}_{j}")));
    }
    let mut table = Table::new(header);
    for (name, traj) in variants {
        for (i, &t) in traj.times.iter().enumerate() {
            let mut row = vec![name.to_string(), num(t)];
            row.extend(traj.q[i].iter().copied().map(num));
            row.extend(traj.v[i].iter().copied().map(num));
            match &traj.u {
                Some(u) => row.extend(u[i].iter().copied().map(num)),
                None => row.extend(std::iter::repeat_n(String::new(), dof)),
            }
            table.push(row);
        }
    }
    table
}

/// One row per `(spec, regressor, variant)` with variant in `{optimal, best, mean}`.
pub fn savings_table(dof: usize, rows: &[SavingsRow]) -> Table {
    let mut header = vec!["set".to_string(), "regressor".to_string()];
    header.extend(spec_header(dof));
    header.extend(["variant", "savings_pct", "uncertainty"].map(String::from));
    let mut table = Table::new(header);
    for r in rows {
        for (variant, value) in [("optimal", r.optimal), ("best", r.best), ("mean", r.mean)] {
            let mut row = vec![r.set.to_string(), r.regressor.to_string()];
            row.extend(spec_cells(&r.spec));
            row.extend([variant.to_string(), num(value), num(r.uncertainty)]);
            table.push(row);
        }
    }
    table
}

/// Mean savings per `(set, regressor)` in first-appearance order.
pub fn savings_summary(rows: &[SavingsRow]) -> Table {
    let mut table = Table::new(["set", "regressor", "specs", "optimal_pct", "best_pct", "mean_pct"]);
    let mut groups: Vec<(String, String, Vec<&SavingsRow>)> = Vec::new();
    for r in rows {
        let (set, reg) = (r.set.to_string(), r.regressor.to_string());
        match groups.iter_mut().find(|g| g.0 == set && g.1 == reg) {
            Some(g) => g.2.push(r),
            None => groups.push((set, reg, vec![r])),
        }
    }
    for (set, reg, members) in groups {
        let n = members.len() as f64;
        let avg = |f: fn(&SavingsRow) -> f64| members.iter().map(|r| f(r)).sum::<f64>() / n;
        table.push(vec![
            set,
            reg,
            members.len().to_string(),
            short(avg(|r| r.optimal)),
            short(avg(|r| r.best)),
            short(avg(|r| r.mean)),
        ]);
    }
    table
}

/// One row per `(model, spec)`.
pub fn violations_table(dof: usize, entries: &[AblationEntry]) -> Table {
    let mut header = vec!["model".to_string(), "set".to_string()];
    header.extend(spec_header(dof));
    header.extend(["position_rad", "velocity_rad_s"].map(String::from));
    let mut table = Table::new(header);
    for e in entries {
        for v in &e.violations {
            let set = v.split.map_or("outside".to_string(), |s| format!("{s:?}").to_lowercase());
            let mut row = vec![e.model.clone(), set];
            row.extend(spec_cells(&v.spec));
            row.extend([num(v.position), num(v.velocity)]);
            table.push(row);
        }
    }
    table
}

pub fn violations_summary(entries: &[AblationEntry]) -> Table {
    let mut table = Table::new(["model", "specs", "mean_position_rad", "mean_velocity_rad_s"]);
    for e in entries {
        table.push(vec![
            e.model.clone(),
            e.violations.len().to_string(),
            short(e.mean_position),
            short(e.mean_velocity),
        ]);
    }
    table
}

pub fn latency_table(rows: &[LatencyStats]) -> Table {
    let mut table = Table::new([
        "regressor",
        "resolution",
        "samples",
        "repetitions",
        "mean_s",
        "p50_s",
        "p99_s",
        "max_s",
        "limit_s",
        "pass",
    ]);
    for r in rows {
        table.push(vec![
            r.regressor.to_string(),
            r.resolution.to_string(),
            r.samples.to_string(),
            r.repetitions.to_string(),
            num(r.mean),
            num(r.p50),
            num(r.p99),
            num(r.max),
            num(r.limit),
            r.pass.to_string(),
        ]);
    }
    table
}

pub fn active_learn_table(dof: usize, report: &ActiveLearnReport) -> Table {
    let mut header = vec!["regressor".to_string()];
    header.extend(spec_header(dof));
    header.extend(
        ["uncertainty", "savings_before_pct", "savings_after_pct", "optimal_pct", "skipped"].map(String::from),
    );
    let mut table = Table::new(header);
    let opt = |x: Option<f64>| x.map(num).unwrap_or_default();
    for e in &report.entries {
        let mut row = vec![report.regressor.to_string()];
        row.extend(spec_cells(&e.spec));
        row.extend([
            num(e.uncertainty),
            opt(e.savings_before),
            opt(e.savings_after),
            opt(e.optimal_savings),
            e.skipped.clone().unwrap_or_default(),
        ]);
        table.push(row);
    }
    table
}
