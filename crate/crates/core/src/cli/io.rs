use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix6};
use serde::{Deserialize, Serialize};

use crate::network::{StructuredWeights, Trajectory};

/// On-disk weights: `N`, the strength matrix by rows, and every block as 36
/// reals in row-major order (block `(i, j)` at index `i·N + j`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsFile {
    pub n: usize,
    pub alpha: Vec<Vec<f64>>,
    pub blocks: Vec<Vec<f64>>,
    pub gamma: f64,
    pub mu: f64,
    pub bias: Vec<f64>,
    pub activation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Vec<f64>>,
}

impl WeightsFile {
    pub fn from_weights(w: &StructuredWeights) -> Self {
        let n = w.n_neurons();
        Self {
            n,
            alpha: (0..n).map(|i| (0..n).map(|j| w.alpha()[(i, j)]).collect()).collect(),
            blocks: w
                .blocks()
                .iter()
                .map(|b| (0..36).map(|k| b[(k / 6, k % 6)]).collect())
                .collect(),
            gamma: 1.0,
            mu: 1.0,
            bias: Vec::new(),
            activation: "tanh".into(),
            target: None,
        }
    }

    pub fn weights(&self) -> Result<StructuredWeights, String> {
        let n = self.n;
        if n == 0 {
            return Err("`n` must be at least 1".into());
        }
        if self.alpha.len() != n || self.alpha.iter().any(|r| r.len() != n) {
            return Err(format!("`alpha` must be {n}x{n}"));
        }
        if self.blocks.len() != n * n || self.blocks.iter().any(|b| b.len() != 36) {
            return Err(format!("`blocks` must hold {} arrays of 36 numbers", n * n));
        }
        let alpha = DMatrix::from_fn(n, n, |i, j| self.alpha[i][j]);
        let blocks = self.blocks.iter().map(|b| Matrix6::from_row_slice(b)).collect();
        StructuredWeights::new(alpha, blocks).map_err(|e| e.to_string())
    }

    pub fn read(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("weights serialize");
        text.push('\n');
        fs::write(path, text)
    }
}

/// 17 significant digits: enough to round-trip any `f64`.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

/// CSV table with a provenance comment line and a header row.
#[derive(Debug, Clone)]
pub struct Table {
    text: String,
    columns: usize,
}

impl Table {
    pub fn new(config_hash: &str, seed: u64, header: &[String]) -> Self {
        let mut text = format!("# config_sha256={config_hash} seed={seed}\n");
        text.push_str(&header.join(","));
        text.push('\n');
        Self { text, columns: header.len() }
    }

    pub fn row(&mut self, cells: &[String]) {
        assert_eq!(cells.len(), self.columns, "row width matches header");
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        fs::write(path, &self.text)
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

pub fn state_header(dim: usize) -> Vec<String> {
    std::iter::once("t".to_string()).chain((0..dim).map(|k| format!("xi_{}_{}", k / 6, k % 6))).collect()
}

pub fn trajectory_table(traj: &Trajectory, config_hash: &str, seed: u64) -> Table {
    let dim = traj.states.first().map_or(0, |s| s.len());
    let mut table = Table::new(config_hash, seed, &state_header(dim));
    for (t, s) in traj.times.iter().zip(&traj.states) {
        let mut row = vec![fmt_real(*t)];
        row.extend(s.iter().map(|x| fmt_real(*x)));
        table.row(&row);
    }
    table
}

/// Reads a trajectory table: `#` lines are skipped, the first remaining line
/// is the header, and every row is `t` followed by a multiple of 6 states.
pub fn read_trajectory(path: &Path) -> Result<Trajectory, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| format!("{}: no header row", path.display()))?;
    let width = header.split(',').count();
    if width < 7 || (width - 1) % 6 != 0 {
        return Err(format!("{}: expected t plus a multiple of 6 columns, got {width}", path.display()));
    }
    let mut traj = Trajectory { times: Vec::new(), states: Vec::new(), converged: false, equilibrium: None };
    for (k, line) in lines.enumerate() {
        let cells: Result<Vec<f64>, _> = line.split(',').map(|c| c.trim().parse::<f64>()).collect();
        let cells = cells.map_err(|e| format!("{}: data row {}: {e}", path.display(), k + 1))?;
        if cells.len() != width {
            return Err(format!(
                "{}: data row {} has {} cells, header has {width}",
                path.display(),
                k + 1,
                cells.len()
            ));
        }
        if !cells.iter().all(|x| x.is_finite()) {
            return Err(format!("{}: data row {} is not finite", path.display(), k + 1));
        }
        traj.times.push(cells[0]);
        traj.states.push(DVector::from_column_slice(&cells[1..]));
    }
    if traj.is_empty() {
        return Err(format!("{}: no data rows", path.display()));
    }
    Ok(traj)
}

pub fn write_text(path: &Path, text: &str) -> std::io::Result<()> {
    let mut s = text.to_string();
    if !s.ends_with('\n') {
        let _ = writeln!(s);
    }
    fs::write(path, s)
}
