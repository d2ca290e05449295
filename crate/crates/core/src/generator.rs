//! Level-structured (block-tridiagonal) generator of the tagged-station QBD.
//!
//! Two assembly modes are supported:
//!
//! * [`AssemblyMode::Standard`]: level moves keep the phase and phase moves
//!   keep the level. Up block `diag(xi_k)`, down block `diag(eta_k)`, local
//!   block `W - diag(xi_k + eta_k)`. This is the generator of the CTMC the
//!   finite-`N` simulator runs, and the default everywhere.
//! * [`AssemblyMode::PaperLiteral`]: queue rates multiply environment rates,
//!   `up_k[i][j] = xi_{k,i} w_{ij}` (`i != j`), `down_k[i][j] = eta_{k,i} w_{ij}`,
//!   and the local block holds the diagonal companions `xi_{k,i} w_{ii}` and
//!   `eta_{k,i} w_{ii}`. Level changes happen only together with a phase
//!   change; with a single phase the whole generator vanishes.

use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{LevelRange, MeanFieldVector, ModelParams};
use crate::rates::{RateTable, Scale};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AssemblyMode {
    #[default]
    Standard,
    PaperLiteral,
}

impl AssemblyMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Standard => "standard",
            Self::PaperLiteral => "paper-literal",
        }
    }
}

impl std::str::FromStr for AssemblyMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "standard" => Ok(Self::Standard),
            "paper-literal" => Ok(Self::PaperLiteral),
            other => Err(format!("unknown assembly mode '{other}'")),
        }
    }
}

impl std::fmt::Display for AssemblyMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Dense `m x m` blocks indexed by level. `down` at the floor and `up` at the
/// ceiling are kept as zero blocks so every level has all three.
#[derive(Debug, Clone)]
pub struct BlockTridiagonal {
    levels: LevelRange,
    phases: usize,
    down: Vec<DMatrix<f64>>,
    local: Vec<DMatrix<f64>>,
    up: Vec<DMatrix<f64>>,
}

impl BlockTridiagonal {
    pub fn from_blocks(
        levels: LevelRange,
        down: Vec<DMatrix<f64>>,
        local: Vec<DMatrix<f64>>,
        up: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let n = levels.len();
        if down.len() != n || local.len() != n || up.len() != n {
            return Err(Error::Dimension(format!(
                "expected {n} blocks of each kind"
            )));
        }
        let phases = local[0].nrows();
        let square = |b: &DMatrix<f64>| b.nrows() == phases && b.ncols() == phases;
        if !(down.iter().all(square) && local.iter().all(square) && up.iter().all(square)) {
            return Err(Error::Dimension("blocks must all be m x m".into()));
        }
        Ok(Self {
            levels,
            phases,
            down,
            local,
            up,
        })
    }

    /// Build from precomputed rates and an environment generator.
    pub fn from_rates(
        rates: &RateTable,
        w: &DMatrix<f64>,
        levels: LevelRange,
        mode: AssemblyMode,
    ) -> Self {
        let m = w.nrows();
        let n = levels.len();
        let mut down = vec![DMatrix::zeros(m, m); n];
        let mut local = vec![DMatrix::zeros(m, m); n];
        let mut up = vec![DMatrix::zeros(m, m); n];
        for o in 0..n {
            for i in 0..m {
                let xi = rates.arrival_at(o, i);
                let eta = rates.service_at(o, i);
                match mode {
                    AssemblyMode::Standard => {
                        up[o][(i, i)] = xi;
                        down[o][(i, i)] = eta;
                        for j in 0..m {
                            local[o][(i, j)] = w[(i, j)];
                        }
                        local[o][(i, i)] -= xi + eta;
                    }
                    AssemblyMode::PaperLiteral => {
                        for j in 0..m {
                            if i != j {
                                up[o][(i, j)] = xi * w[(i, j)];
                                down[o][(i, j)] = eta * w[(i, j)];
                            }
                        }
                        local[o][(i, i)] = (xi + eta) * w[(i, i)];
                    }
                }
            }
        }
        Self {
            levels,
            phases: m,
            down,
            local,
            up,
        }
    }

    pub fn levels(&self) -> LevelRange {
        self.levels
    }

    pub fn phases(&self) -> usize {
        self.phases
    }

    pub fn dim(&self) -> usize {
        self.levels.len() * self.phases
    }

    /// Block from level `k` to `k-1`.
    pub fn down(&self, k: i32) -> &DMatrix<f64> {
        &self.down[self.levels.offset(k)]
    }

    pub fn local(&self, k: i32) -> &DMatrix<f64> {
        &self.local[self.levels.offset(k)]
    }

    /// Block from level `k` to `k+1`.
    pub fn up(&self, k: i32) -> &DMatrix<f64> {
        &self.up[self.levels.offset(k)]
    }

    pub fn local_mut(&mut self, k: i32) -> &mut DMatrix<f64> {
        let o = self.levels.offset(k);
        &mut self.local[o]
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let m = self.phases;
        let n = self.levels.len();
        let mut v = DMatrix::zeros(n * m, n * m);
        for o in 0..n {
            v.view_mut((o * m, o * m), (m, m)).copy_from(&self.local[o]);
            if o > 0 {
                v.view_mut((o * m, (o - 1) * m), (m, m))
                    .copy_from(&self.down[o]);
            }
            if o + 1 < n {
                v.view_mut((o * m, (o + 1) * m), (m, m))
                    .copy_from(&self.up[o]);
            }
        }
        v
    }

    /// `||V e||_inf`.
    pub fn row_sum_residual(&self) -> f64 {
        let m = self.phases;
        let n = self.levels.len();
        let mut worst: f64 = 0.0;
        for o in 0..n {
            for i in 0..m {
                let mut s = 0.0;
                for j in 0..m {
                    s += self.local[o][(i, j)];
                    if o > 0 {
                        s += self.down[o][(i, j)];
                    }
                    if o + 1 < n {
                        s += self.up[o][(i, j)];
                    }
                }
                worst = worst.max(s.abs());
            }
        }
        worst
    }

    /// Smallest off-diagonal entry of the assembled matrix.
    pub fn min_off_diagonal(&self) -> f64 {
        let m = self.phases;
        let n = self.levels.len();
        let mut lo = f64::INFINITY;
        for o in 0..n {
            for i in 0..m {
                for j in 0..m {
                    if i != j {
                        lo = lo.min(self.local[o][(i, j)]);
                    }
                    if o > 0 {
                        lo = lo.min(self.down[o][(i, j)]);
                    }
                    if o + 1 < n {
                        lo = lo.min(self.up[o][(i, j)]);
                    }
                }
            }
        }
        lo
    }

    /// Row vector times generator, `y V`, written into `out`.
    pub fn left_mul_into(&self, y: &[f64], out: &mut [f64]) {
        let m = self.phases;
        let n = self.levels.len();
        debug_assert_eq!(y.len(), n * m);
        out.iter_mut().for_each(|v| *v = 0.0);
        for o in 0..n {
            let yo = &y[o * m..(o + 1) * m];
            for (i, &yi) in yo.iter().enumerate() {
                if yi == 0.0 {
                    continue;
                }
                for j in 0..m {
                    out[o * m + j] += yi * self.local[o][(i, j)];
                    if o > 0 {
                        out[(o - 1) * m + j] += yi * self.down[o][(i, j)];
                    }
                    if o + 1 < n {
                        out[(o + 1) * m + j] += yi * self.up[o][(i, j)];
                    }
                }
            }
        }
    }

    pub fn left_mul(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; y.len()];
        self.left_mul_into(y, &mut out);
        out
    }

    /// `||y V||_inf`.
    pub fn stationarity_residual(&self, y: &[f64]) -> f64 {
        self.left_mul(y).iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// Multiply every block by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let s = |v: &Vec<DMatrix<f64>>| v.iter().map(|b| b * c).collect();
        Self {
            levels: self.levels,
            phases: self.phases,
            down: s(&self.down),
            local: s(&self.local),
            up: s(&self.up),
        }
    }

    /// Dense matrix as comma-separated rows, preceded by a `#` header naming
    /// the row/column ordering.
    pub fn write_dense_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let m = self.phases;
        writeln!(
            out,
            "# dense generator, {} x {}, index = (level - {}) * {} + phase",
            self.dim(),
            self.dim(),
            self.levels.min,
            m
        )?;
        let dense = self.to_dense();
        for r in 0..dense.nrows() {
            let row: Vec<String> = dense.row(r).iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Generator together with the rates it was built from.
#[derive(Debug, Clone)]
pub struct Assembly {
    pub generator: BlockTridiagonal,
    pub rates: RateTable,
}

/// Assemble `V_y` for the given vector, station count and mode.
pub fn assemble(
    y: &MeanFieldVector,
    p: &ModelParams,
    scale: Scale,
    mode: AssemblyMode,
) -> Result<Assembly> {
    let rates = RateTable::evaluate(y, p, scale)?;
    let generator = BlockTridiagonal::from_rates(&rates, p.env.generator(), p.levels(), mode);
    Ok(Assembly { generator, rates })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Environment;

    fn common() -> ModelParams {
        let env = Environment::two_phase(1.0, 1.0, [35.0, 50.0], [30.0, 20.0]).unwrap();
        ModelParams::new(20, 10, 5, 0.5, 0.5, env).unwrap()
    }

    fn start(p: &ModelParams) -> MeanFieldVector {
        MeanFieldVector::point_mass(p.levels(), p.c(), p.env.stationary())
    }

    #[test]
    fn standard_mode_common_parameters() {
        let p = common();
        let a = assemble(&start(&p), &p, Scale::Limit, AssemblyMode::Standard).unwrap();
        let v = a.generator.to_dense();
        assert_eq!(v.nrows(), 62);
        assert!(a.generator.row_sum_residual() <= 1e-12);
        for i in 0..62 {
            let s: f64 = v.row(i).iter().sum();
            assert!(s.abs() <= 1e-12);
            for j in 0..62 {
                if i != j {
                    assert!(v[(i, j)] >= 0.0);
                } else {
                    assert!(v[(i, i)] <= 0.0);
                }
            }
        }
    }

    #[test]
    fn paper_literal_row_sums() {
        let p = common();
        let a = assemble(&start(&p), &p, Scale::Limit, AssemblyMode::PaperLiteral).unwrap();
        assert!(a.generator.row_sum_residual() <= 1e-12);
        // level moves always switch phase
        let up = a.generator.up(3);
        assert_eq!(up[(0, 0)], 0.0);
        assert!(up[(0, 1)] > 0.0);
    }

    #[test]
    fn single_phase_reduces_to_birth_death() {
        let env = Environment::constant(3.0, 2.0).unwrap();
        let p = ModelParams::new(4, 2, 1, 0.5, 0.5, env).unwrap();
        let y = MeanFieldVector::point_mass(p.levels(), 2, &[1.0]);
        let std = assemble(&y, &p, Scale::Limit, AssemblyMode::Standard).unwrap();
        let v = std.generator.to_dense();
        for (o, k) in p.levels().iter().enumerate() {
            let birth = if k < p.levels().max {
                std.rates.arrival_at(o, 0)
            } else {
                0.0
            };
            let death = if k > p.levels().min {
                std.rates.service_at(o, 0)
            } else {
                0.0
            };
            if o + 1 < v.nrows() {
                assert_eq!(v[(o, o + 1)], birth);
            }
            if o > 0 {
                assert_eq!(v[(o, o - 1)], death);
            }
            assert_eq!(v[(o, o)], -(birth + death));
        }
        let lit = BlockTridiagonal::from_rates(
            &std.rates,
            p.env.generator(),
            p.levels(),
            AssemblyMode::PaperLiteral,
        );
        assert!(lit.to_dense().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn perturbation_shows_in_residual() {
        let p = common();
        let mut g = assemble(&start(&p), &p, Scale::Limit, AssemblyMode::Standard)
            .unwrap()
            .generator;
        g.local_mut(3)[(0, 1)] += 1e-6;
        let r = g.row_sum_residual();
        assert!((r - 1e-6).abs() < 1e-12);
    }

    #[test]
    fn left_mul_matches_dense() {
        let p = common();
        let g = assemble(&start(&p), &p, Scale::Finite(50), AssemblyMode::Standard)
            .unwrap()
            .generator;
        let y: Vec<f64> = (0..62).map(|i| ((i * 7) % 11) as f64 / 100.0).collect();
        let dense = g.to_dense();
        let expect = dense.transpose() * nalgebra::DVector::from_column_slice(&y);
        let got = g.left_mul(&y);
        for (a, b) in got.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn homogeneous_in_rates() {
        let p = common();
        let c = 3.5;
        let w = p.env.generator() * c;
        let lam: Vec<f64> = p.env.lambda().iter().map(|x| x * c).collect();
        let mu: Vec<f64> = p.env.mu().iter().map(|x| x * c).collect();
        let env = Environment::new(w, lam, mu).unwrap();
        let q = ModelParams { env, ..p.clone() };
        let a = assemble(&start(&p), &p, Scale::Limit, AssemblyMode::Standard)
            .unwrap()
            .generator;
        let b = assemble(&start(&q), &q, Scale::Limit, AssemblyMode::Standard)
            .unwrap()
            .generator;
        assert!((a.scaled(c).to_dense() - b.to_dense()).amax() < 1e-9);
    }

    #[test]
    fn dense_csv_export() {
        let env = Environment::constant(1.0, 1.0).unwrap();
        let p = ModelParams::new(2, 1, 0, 0.0, 0.0, env).unwrap();
        let y = MeanFieldVector::point_mass(p.levels(), 1, &[1.0]);
        let g = assemble(&y, &p, Scale::Limit, AssemblyMode::Standard)
            .unwrap()
            .generator;
        let mut buf = Vec::new();
        g.write_dense_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with('#'));
    }
}
