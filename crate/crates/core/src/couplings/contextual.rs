//! Contextual hidden-variable couplings and their post-selected variant.
//!
//! Both share one structure: correlated system variables `(λ₁, λ₂)` with a
//! context-independent joint law, instrument variables `(μx, μy)` whose joint
//! law `P_xy(μx, μy)` may depend on the context, and local deterministic
//! responses `A_x(λ₁, μx)`, `B_y(λ₂, μy)`.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use super::{check_signs, normalized, outcome_of, Moments, RawMarginals};
use crate::context::{AngleAssignment, Outcome, SettingPair};
use crate::error::{Error, Result};

/// Sparse joint law `P(λ₁, λ₂)` over `Λ₁ × Λ₂`.
#[derive(Debug, Clone)]
pub struct HiddenJoint {
    n1: usize,
    n2: usize,
    entries: Vec<(usize, usize, f64)>,
    sampler: WeightedIndex<f64>,
}

impl HiddenJoint {
    pub fn dense(rows: &[Vec<f64>]) -> Result<Self> {
        let n1 = rows.len();
        let n2 = rows.first().map_or(0, Vec::len);
        if n1 == 0 || n2 == 0 || rows.iter().any(|r| r.len() != n2) {
            return Err(Error::InvalidModel(
                "lambda joint must be a non-empty rectangular matrix".into(),
            ));
        }
        let entries = rows
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.iter().enumerate().map(move |(j, &w)| (i, j, w)))
            .collect();
        Self::from_entries(n1, n2, entries)
    }

    /// `λ₁ = λ₂` with the given weights.
    pub fn diagonal(weights: &[f64]) -> Result<Self> {
        let n = weights.len();
        Self::from_entries(n, n, weights.iter().enumerate().map(|(i, &w)| (i, i, w)).collect())
    }

    pub fn from_entries(n1: usize, n2: usize, entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(&(i, j, _)) = entries.iter().find(|&&(i, j, _)| i >= n1 || j >= n2) {
            return Err(Error::InvalidModel(format!("lambda entry ({i}, {j}) out of range")));
        }
        let weights: Vec<f64> = entries.iter().map(|e| e.2).collect();
        let weights = normalized("lambda joint", &weights)?;
        let entries: Vec<_> = entries
            .into_iter()
            .zip(weights)
            .filter(|(_, w)| *w > 0.0)
            .map(|((i, j, _), w)| (i, j, w))
            .collect();
        let sampler = WeightedIndex::new(entries.iter().map(|e| e.2)).expect("validated");
        Ok(HiddenJoint {
            n1,
            n2,
            entries,
            sampler,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n1, self.n2)
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let (i, j, _) = self.entries[self.sampler.sample(rng)];
        (i, j)
    }
}

#[derive(Debug, Clone)]
struct Core {
    lambda: HiddenJoint,
    mx: usize,
    my: usize,
    /// Row-major `P_xy(μx, μy)` per context.
    mu: [Vec<f64>; 4],
    mu_sampler: [WeightedIndex<f64>; 4],
    /// `resp_a[x][λ₁ · mx + μx]`
    resp_a: [Vec<i8>; 2],
    resp_b: [Vec<i8>; 2],
}

/// Sums over the full hidden space for one context.
#[derive(Default)]
struct Sums {
    ab: f64,
    a_nz: f64,
    b_nz: f64,
    both: f64,
}

impl Core {
    fn new(
        lambda: HiddenJoint,
        mu: [Vec<Vec<f64>>; 4],
        resp_a: [Vec<Vec<i8>>; 2],
        resp_b: [Vec<Vec<i8>>; 2],
        allow_zero: bool,
    ) -> Result<Self> {
        let mx = mu[0].len();
        let my = mu[0].first().map_or(0, Vec::len);
        if mx == 0 || my == 0 {
            return Err(Error::InvalidModel("instrument tables must be non-empty".into()));
        }
        let mut flat_mu: [Vec<f64>; 4] = Default::default();
        for (k, table) in mu.iter().enumerate() {
            if table.len() != mx || table.iter().any(|r| r.len() != my) {
                return Err(Error::InvalidModel(format!(
                    "instrument table for context {} must be {mx}x{my}",
                    SettingPair::from_index(k)
                )));
            }
            let flat: Vec<f64> = table.iter().flatten().copied().collect();
            flat_mu[k] = normalized(&format!("instrument table {}", SettingPair::from_index(k)), &flat)?;
        }
        let (n1, n2) = lambda.dims();
        let flatten = |tables: [Vec<Vec<i8>>; 2], rows: usize, cols: usize, who: &str| -> Result<[Vec<i8>; 2]> {
            let mut out: [Vec<i8>; 2] = Default::default();
            for (label, t) in tables.into_iter().enumerate() {
                if t.len() != rows || t.iter().any(|r| r.len() != cols) {
                    return Err(Error::InvalidModel(format!(
                        "{who} response table for setting {label} must be {rows}x{cols}"
                    )));
                }
                let flat: Vec<i8> = t.into_iter().flatten().collect();
                check_signs(who, &flat, allow_zero)?;
                out[label] = flat;
            }
            Ok(out)
        };
        let resp_a = flatten(resp_a, n1, mx, "alice")?;
        let resp_b = flatten(resp_b, n2, my, "bob")?;
        let mu_sampler = std::array::from_fn(|k| WeightedIndex::new(&flat_mu[k]).expect("validated"));
        Ok(Core {
            lambda,
            mx,
            my,
            mu: flat_mu,
            mu_sampler,
            resp_a,
            resp_b,
        })
    }

    fn rows(&self, s: SettingPair, i: usize, j: usize) -> (&[i8], &[i8]) {
        let a = &self.resp_a[s.x() as usize][i * self.mx..(i + 1) * self.mx];
        let b = &self.resp_b[s.y() as usize][j * self.my..(j + 1) * self.my];
        (a, b)
    }

    fn sums(&self, s: SettingPair) -> Sums {
        let mu = &self.mu[s.index()];
        let mut out = Sums::default();
        for &(i, j, w) in &self.lambda.entries {
            let (arow, brow) = self.rows(s, i, j);
            let mut inner = Sums::default();
            for (ux, &a) in arow.iter().enumerate() {
                if a == 0 {
                    continue;
                }
                let prow = &mu[ux * self.my..(ux + 1) * self.my];
                for (&p, &b) in prow.iter().zip(brow) {
                    if b != 0 {
                        inner.ab += p * (a * b) as f64;
                        inner.a_nz += p * a as f64;
                        inner.b_nz += p * b as f64;
                        inner.both += p;
                    }
                }
            }
            out.ab += w * inner.ab;
            out.a_nz += w * inner.a_nz;
            out.b_nz += w * inner.b_nz;
            out.both += w * inner.both;
        }
        out
    }

    fn moments(&self, s: SettingPair) -> Result<Moments> {
        let sums = self.sums(s);
        if sums.both <= 0.0 {
            return Err(Error::Starved(vec![s]));
        }
        Ok(Moments {
            e_ab: sums.ab / sums.both,
            e_a: sums.a_nz / sums.both,
            e_b: sums.b_nz / sums.both,
            c: sums.both,
        })
    }

    fn raw_marginals(&self, s: SettingPair) -> RawMarginals {
        let mu = &self.mu[s.index()];
        let cell = |v: i8| match v {
            1 => 0,
            -1 => 1,
            _ => 2,
        };
        let mut out = RawMarginals {
            alice: [0.0; 3],
            bob: [0.0; 3],
        };
        for &(i, j, w) in &self.lambda.entries {
            let (arow, brow) = self.rows(s, i, j);
            for (ux, &a) in arow.iter().enumerate() {
                let prow = &mu[ux * self.my..(ux + 1) * self.my];
                for (&p, &b) in prow.iter().zip(brow) {
                    out.alice[cell(a)] += w * p;
                    out.bob[cell(b)] += w * p;
                }
            }
        }
        out
    }

    fn sample<R: Rng + ?Sized>(&self, s: SettingPair, rng: &mut R) -> (Outcome, Outcome) {
        let (i, j) = self.lambda.sample(rng);
        let k = self.mu_sampler[s.index()].sample(rng);
        let (ux, uy) = (k / self.my, k % self.my);
        let (arow, brow) = self.rows(s, i, j);
        (outcome_of(arow[ux]), outcome_of(brow[uy]))
    }

    fn statistical_dependence(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for p in 0..4 {
            for q in p + 1..4 {
                let tv: f64 = self.mu[p]
                    .iter()
                    .zip(&self.mu[q])
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>()
                    / 2.0;
                worst = worst.max(tv);
            }
        }
        worst
    }
}

fn outer(p: &[f64], q: &[f64]) -> Vec<Vec<f64>> {
    p.iter().map(|a| q.iter().map(|b| a * b).collect()).collect()
}

/// Contextual coupling with outcomes in `{±1}`.
#[derive(Debug, Clone)]
pub struct ContextualHvModel(Core);

impl ContextualHvModel {
    /// `mu[k]` is the `|Mx| × |My|` table of context `SettingPair::ALL[k]`;
    /// `resp_a[x]` is `|Λ₁| × |Mx|`, `resp_b[y]` is `|Λ₂| × |My|`.
    pub fn new(
        lambda: HiddenJoint,
        mu: [Vec<Vec<f64>>; 4],
        resp_a: [Vec<Vec<i8>>; 2],
        resp_b: [Vec<Vec<i8>>; 2],
    ) -> Result<Self> {
        Core::new(lambda, mu, resp_a, resp_b, false).map(ContextualHvModel)
    }

    /// Instrument law `P(μx, μy | xy) ∝ f(θ_xy, μx, μy)`: contexts with equal
    /// relative angle share one table.
    pub fn rotation_invariant<F>(
        lambda: HiddenJoint,
        angles: AngleAssignment,
        mu_dims: (usize, usize),
        f: F,
        resp_a: [Vec<Vec<i8>>; 2],
        resp_b: [Vec<Vec<i8>>; 2],
    ) -> Result<Self>
    where
        F: Fn(f64, usize, usize) -> f64,
    {
        let (mx, my) = mu_dims;
        let mu = SettingPair::ALL.map(|s| {
            let theta = angles.relative(s);
            let raw: Vec<Vec<f64>> = (0..mx).map(|ux| (0..my).map(|uy| f(theta, ux, uy)).collect()).collect();
            let z: f64 = raw.iter().flatten().sum();
            raw.into_iter()
                .map(|r| r.into_iter().map(|v| v / z).collect())
                .collect()
        });
        Self::new(lambda, mu, resp_a, resp_b)
    }

    pub fn exact(&self, s: SettingPair) -> Moments {
        self.0.moments(s).expect("zero-free responses never starve")
    }

    pub fn raw_marginals(&self, s: SettingPair) -> RawMarginals {
        self.0.raw_marginals(s)
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: SettingPair, rng: &mut R) -> (Outcome, Outcome) {
        self.0.sample(s, rng)
    }

    pub fn statistical_dependence(&self) -> f64 {
        self.0.statistical_dependence()
    }
}

/// Contextual coupling whose responses may be vacuous (`0`); expectations are
/// conditioned on `A B ≠ 0` and normalized by `C_xy`.
#[derive(Debug, Clone)]
pub struct PostSelectionModel(Core);

impl PostSelectionModel {
    pub fn new(
        lambda: HiddenJoint,
        mu: [Vec<Vec<f64>>; 4],
        resp_a: [Vec<Vec<i8>>; 2],
        resp_b: [Vec<Vec<i8>>; 2],
    ) -> Result<Self> {
        let core = Core::new(lambda, mu, resp_a, resp_b, true)?;
        if SettingPair::ALL.iter().all(|&s| core.sums(s).both <= 0.0) {
            return Err(Error::InvalidModel(
                "every context is starved (C_xy = 0 everywhere)".into(),
            ));
        }
        Ok(PostSelectionModel(core))
    }

    /// Instrument law `P_xy(μx, μy) = P_x(μx) P_y(μy)`.
    pub fn factorized(
        lambda: HiddenJoint,
        p_alice: [Vec<f64>; 2],
        p_bob: [Vec<f64>; 2],
        resp_a: [Vec<Vec<i8>>; 2],
        resp_b: [Vec<Vec<i8>>; 2],
    ) -> Result<Self> {
        let mu = SettingPair::ALL.map(|s| outer(&p_alice[s.x() as usize], &p_bob[s.y() as usize]));
        Self::new(lambda, mu, resp_a, resp_b)
    }

    pub fn exact(&self, s: SettingPair) -> Result<Moments> {
        self.0.moments(s)
    }

    pub fn raw_marginals(&self, s: SettingPair) -> RawMarginals {
        self.0.raw_marginals(s)
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: SettingPair, rng: &mut R) -> (Outcome, Outcome) {
        self.0.sample(s, rng)
    }

    pub fn statistical_dependence(&self) -> f64 {
        self.0.statistical_dependence()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::couplings::CouplingModel;

    fn uniform_mu(mx: usize, my: usize) -> Vec<Vec<f64>> {
        vec![vec![1.0 / (mx * my) as f64; my]; mx]
    }

    type Fixture = (Vec<Vec<f64>>, [Vec<Vec<f64>>; 4], [Vec<Vec<i8>>; 2], [Vec<Vec<i8>>; 2]);

    /// Two-point CHVM used by several tests.
    fn fixture() -> Fixture {
        let lambda = vec![vec![0.4, 0.1], vec![0.2, 0.3]];
        let mu = [
            vec![vec![0.5, 0.0], vec![0.0, 0.5]],
            vec![vec![0.1, 0.2], vec![0.3, 0.4]],
            vec![vec![0.25, 0.25], vec![0.25, 0.25]],
            vec![vec![0.0, 0.6], vec![0.4, 0.0]],
        ];
        let resp_a = [vec![vec![1, -1], vec![-1, -1]], vec![vec![1, 1], vec![-1, 1]]];
        let resp_b = [vec![vec![-1, 1], vec![1, 1]], vec![vec![1, -1], vec![-1, -1]]];
        (lambda, mu, resp_a, resp_b)
    }

    #[test]
    fn exact_matches_brute_force_enumeration() {
        let (lambda, mu, ra, rb) = fixture();
        let m =
            ContextualHvModel::new(HiddenJoint::dense(&lambda).unwrap(), mu.clone(), ra.clone(), rb.clone()).unwrap();
        for s in SettingPair::ALL {
            let (x, y) = (s.x() as usize, s.y() as usize);
            let (mut e_ab, mut e_a, mut e_b) = (0.0, 0.0, 0.0);
            for l1 in 0..2 {
                for l2 in 0..2 {
                    for ux in 0..2 {
                        for uy in 0..2 {
                            let w = lambda[l1][l2] * mu[s.index()][ux][uy];
                            let a = ra[x][l1][ux] as f64;
                            let b = rb[y][l2][uy] as f64;
                            e_ab += w * a * b;
                            e_a += w * a;
                            e_b += w * b;
                        }
                    }
                }
            }
            let got = m.exact(s);
            assert!((got.e_ab - e_ab).abs() < 1e-15, "{s}: {} vs {e_ab}", got.e_ab);
            assert!((got.e_a - e_a).abs() < 1e-15);
            assert!((got.e_b - e_b).abs() < 1e-15);
            assert_eq!(got.c, 1.0);
        }
        // Frozen values from the enumeration above.
        assert!((m.exact(SettingPair::ALL[0]).e_ab - (-0.7)).abs() < 1e-12);
    }

    #[test]
    fn statistical_dependence_values() {
        let (lambda, mu, ra, rb) = fixture();
        let m = ContextualHvModel::new(HiddenJoint::dense(&lambda).unwrap(), mu, ra.clone(), rb.clone()).unwrap();
        // Pairwise TV distances, by hand:
        // (00,01) 0.5·(0.4+0.2+0.3+0.1)=0.5, (00,10) 0.5, (00,11) 1.0,
        // (01,10) 0.5·(0.15+0.05+0.05+0.15)=0.2, (01,11) 0.5·(0.1+0.4+0.1+0.4)=0.5,
        // (10,11) 0.5·(0.25+0.35+0.15+0.25)=0.5
        assert!((m.statistical_dependence() - 1.0).abs() < 1e-15);

        let same = ContextualHvModel::new(
            HiddenJoint::dense(&lambda).unwrap(),
            std::array::from_fn(|_| uniform_mu(2, 2)),
            ra.clone(),
            rb.clone(),
        )
        .unwrap();
        assert_eq!(same.statistical_dependence(), 0.0);

        let mu = [
            vec![vec![0.1, 0.2], vec![0.3, 0.4]],
            vec![vec![0.25, 0.25], vec![0.25, 0.25]],
            vec![vec![0.1, 0.2], vec![0.3, 0.4]],
            vec![vec![0.1, 0.2], vec![0.3, 0.4]],
        ];
        let m = ContextualHvModel::new(HiddenJoint::dense(&lambda).unwrap(), mu, ra, rb).unwrap();
        assert!((m.statistical_dependence() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn chvm_rejects_vacuous_responses() {
        let (lambda, mu, mut ra, rb) = fixture();
        ra[0][0][0] = 0;
        assert!(ContextualHvModel::new(HiddenJoint::dense(&lambda).unwrap(), mu, ra, rb).is_err());
    }

    #[test]
    fn rotation_invariance_ties_equal_angles() {
        let (lambda, _, ra, rb) = fixture();
        // θ_xy equal for (0,0) and (1,1)
        let angles = AngleAssignment {
            alice: [0.0, 1.0],
            bob: [0.5, 1.5],
        };
        let m = ContextualHvModel::rotation_invariant(
            HiddenJoint::dense(&lambda).unwrap(),
            angles,
            (2, 2),
            |t, ux, uy| 1.0 + (t * (1 + ux + 2 * uy) as f64).cos().abs(),
            ra,
            rb,
        )
        .unwrap();
        assert_eq!(m.0.mu[0], m.0.mu[3]);
        assert_ne!(m.0.mu[0], m.0.mu[1]);
    }

    #[test]
    fn all_starved_rejected() {
        let lambda = HiddenJoint::diagonal(&[1.0]).unwrap();
        let r = PostSelectionModel::factorized(
            lambda,
            [vec![1.0], vec![1.0]],
            [vec![1.0], vec![1.0]],
            [vec![vec![0]], vec![vec![0]]],
            [vec![vec![1]], vec![vec![-1]]],
        );
        assert!(r.is_err());
    }

    #[test]
    fn post_selection_normalizes_by_retention() {
        // λ uniform on {0,1,2}; A vacuous for λ = 2 under x = 0.
        let lambda = HiddenJoint::diagonal(&[1.0 / 3.0; 3]).unwrap();
        let m = PostSelectionModel::factorized(
            lambda,
            [vec![1.0], vec![1.0]],
            [vec![1.0], vec![1.0]],
            [vec![vec![1], vec![-1], vec![0]], vec![vec![1], vec![1], vec![1]]],
            [vec![vec![1], vec![1], vec![1]], vec![vec![-1], vec![1], vec![-1]]],
        )
        .unwrap();
        let s00 = m.exact(SettingPair::ALL[0]).unwrap();
        assert!((s00.c - 2.0 / 3.0).abs() < 1e-15);
        assert!(s00.e_ab.abs() < 1e-15);
        let s11 = m.exact(SettingPair::ALL[3]).unwrap();
        assert!((s11.e_ab - (-1.0 / 3.0)).abs() < 1e-15);
        let raw = CouplingModel::from(m).raw_marginals(SettingPair::ALL[0]);
        assert!((raw.alice[2] - 1.0 / 3.0).abs() < 1e-15);
    }
}
