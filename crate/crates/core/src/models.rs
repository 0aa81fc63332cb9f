//! Ground-truth spectral models, samplers and per-node empirical matrices.
//!
//! Every sampler is a pure function of its parameters and seed. Per-node
//! streams are obtained with [`derive_seed`], so nodes can sample in any order
//! or concurrently and still reproduce the same data.

use std::ops::Range;

use rand::SeedableRng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, SubspaceEstimate};

/// Decay base of the trailing spectrum in model M1.
pub const M1_TAIL_DECAY: f64 = 0.9;

/// Default truncation multiplier for quadratic sensing: `τ = 9·mean(y)`.
pub const DEFAULT_TAU_MULT: f64 = 9.0;

/// Minimum eigenvalue tolerated by the PSD checks.
pub const PSD_FLOOR: f64 = -1e-10;

/// Mixes `(seed, stream, index)` into an independent 64-bit seed
/// (splitmix64 finaliser applied twice).
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(mix(seed ^ stream.rotate_left(32)) ^ index)
}

/// Seed streams used when deriving per-purpose seeds from one master seed.
pub mod stream {
    pub const BASIS: u64 = 1;
    pub const NODE_SAMPLES: u64 = 2;
    pub const ATOMS: u64 = 3;
    pub const SENSING: u64 = 4;
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    // Fill row by row so the draw order matches the row-major layout.
    let mut m = Matrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = StandardNormal.sample(rng);
        }
    }
    m
}

/// Haar-distributed `d × d` orthogonal matrix: QR of a Gaussian matrix with
/// the positive-diagonal convention on `R`.
pub fn haar_orthogonal(d: usize, seed: u64) -> Matrix {
    assert!(d >= 1, "haar_orthogonal needs d >= 1");
    let mut rng = rng_from_seed(seed);
    loop {
        let g = gaussian_matrix(d, d, &mut rng);
        // A singular Gaussian draw has probability zero; redraw if it happens.
        if let Ok((q, _)) = linalg::qr_orthonormalize(&g) {
            return q.into_inner();
        }
    }
}

/// Haar-random `d × r` orthonormal frame (first `r` columns of a Haar matrix).
pub fn haar_frame(d: usize, r: usize, seed: u64) -> Result<SubspaceEstimate> {
    if r == 0 || r > d {
        return Err(Error::InvalidArgument(format!("cannot draw a {d}x{r} frame")));
    }
    SubspaceEstimate::leading_columns(&haar_orthogonal(d, seed), r)
}

/// Which family a [`SpectralModel`] was built from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelKind {
    /// Linearly spaced leading eigenvalues, geometric tail.
    M1 { lambda_lo: f64, lambda_hi: f64, delta: f64 },
    /// Flat leading eigenvalues, geometric tail tuned to an intrinsic dimension.
    M2 { delta: f64, r_star: f64, alpha: f64 },
}

/// Ground-truth spectrum `X = U·diag(τ)·Uᵀ` with a Haar basis `U`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralModel {
    pub d: usize,
    pub r: usize,
    /// Descending, with `eigenvalues[0] = 1`.
    pub eigenvalues: Vec<f64>,
    pub basis_seed: u64,
    /// Realized eigengap `λ_r − λ_{r+1}`.
    pub delta: f64,
    pub kind: ModelKind,
}

impl SpectralModel {
    /// `Σλ / λ₁` of the (finite) spectrum.
    pub fn intdim(&self) -> f64 {
        self.eigenvalues.iter().sum::<f64>() / self.eigenvalues[0]
    }

    /// Target intrinsic dimension for M2 models.
    pub fn r_star_target(&self) -> Option<f64> {
        match self.kind {
            ModelKind::M2 { r_star, .. } => Some(r_star),
            ModelKind::M1 { .. } => None,
        }
    }

    pub fn with_basis_seed(mut self, seed: u64) -> Self {
        self.basis_seed = seed;
        self
    }
}

/// Model M1. For `r = 1` the single leading eigenvalue is `lambda_hi`.
pub fn model_m1(
    d: usize,
    r: usize,
    lambda_lo: f64,
    lambda_hi: f64,
    delta: f64,
) -> Result<SpectralModel> {
    let bad = |msg: &str| Err(Error::InvalidModelParams(msg.to_string()));
    if r < 1 || r >= d {
        return bad("need 1 <= r < d");
    }
    if !(delta > 0.0 && delta < lambda_lo && lambda_lo <= lambda_hi) {
        return bad("need 0 < delta < lambda_lo <= lambda_hi");
    }
    if (lambda_hi - 1.0).abs() > 1e-12 {
        return bad("lambda_hi must equal 1 (unit leading eigenvalue)");
    }
    let mut tau = Vec::with_capacity(d);
    for i in 1..=r {
        if r == 1 {
            tau.push(lambda_hi);
        } else {
            tau.push(lambda_hi - (lambda_hi - lambda_lo) * (i - 1) as f64 / (r - 1) as f64);
        }
    }
    for i in (r + 1)..=d {
        tau.push((lambda_lo - delta) * M1_TAIL_DECAY.powi((i - r - 1) as i32));
    }
    let gap = tau[r - 1] - tau[r];
    Ok(SpectralModel {
        d,
        r,
        eigenvalues: tau,
        basis_seed: 0,
        delta: gap,
        kind: ModelKind::M1 {
            lambda_lo,
            lambda_hi,
            delta,
        },
    })
}

/// Model M2: `τ_i = 1` for `i ≤ r`, `(1 − δ)·α^{i−r}` beyond, with
/// `α = 1 − (1 − δ)/(r★ − r)`.
pub fn model_m2(d: usize, r: usize, delta: f64, r_star: f64) -> Result<SpectralModel> {
    let bad = |msg: &str| Err(Error::InvalidModelParams(msg.to_string()));
    if r < 1 || r >= d {
        return bad("need 1 <= r < d");
    }
    if !(delta > 0.0 && delta < 1.0) {
        return bad("need 0 < delta < 1");
    }
    if !(r_star > r as f64 + (1.0 - delta)) {
        return bad("need r_star > r + (1 - delta) so that alpha lies in (0, 1)");
    }
    let alpha = 1.0 - (1.0 - delta) / (r_star - r as f64);
    let mut tau = vec![1.0; r];
    for i in (r + 1)..=d {
        tau.push((1.0 - delta) * alpha.powi((i - r) as i32));
    }
    let gap = tau[r - 1] - tau[r];
    Ok(SpectralModel {
        d,
        r,
        eigenvalues: tau,
        basis_seed: 0,
        delta: gap,
        kind: ModelKind::M2 {
            delta,
            r_star,
            alpha,
        },
    })
}

/// `X = U·diag(τ)·Uᵀ` and `V₁ = U[:, :r]` with `U = haar_orthogonal(d, basis_seed)`.
pub fn realize_matrix(model: &SpectralModel) -> Result<(Matrix, SubspaceEstimate)> {
    let u = haar_orthogonal(model.d, model.basis_seed);
    let mut scaled = u.clone();
    for (j, &t) in model.eigenvalues.iter().enumerate() {
        scaled.column_mut(j).scale_mut(t);
    }
    let x = &scaled * u.transpose();
    let x = (&x + x.transpose()) * 0.5;
    let v1 = SubspaceEstimate::leading_columns(&u, model.r)?;
    Ok((x, v1))
}

/// Symmetric square root of a PSD matrix (negative round-off eigenvalues
/// clamped to zero).
pub fn psd_sqrt(x: &Matrix) -> Result<Matrix> {
    let (vals, vecs) = linalg::symmetric_eigen(x)?;
    let min = vals.last().copied().unwrap_or(0.0);
    if min < PSD_FLOOR {
        return Err(Error::NotPsd(min));
    }
    let mut scaled = vecs.clone();
    for (j, &v) in vals.iter().enumerate() {
        scaled.column_mut(j).scale_mut(v.max(0.0).sqrt());
    }
    Ok(&scaled * vecs.transpose())
}

/// `n` i.i.d. rows from `N(0, X)`.
pub fn sample_gaussian(x: &Matrix, n: usize, seed: u64) -> Result<Matrix> {
    let root = psd_sqrt(x)?;
    Ok(sample_with_root(&root, n, seed))
}

/// `n` i.i.d. rows `g·root` with standard-normal `g`; `root` must be a
/// symmetric square root of the target covariance.
pub fn sample_with_root(root: &Matrix, n: usize, seed: u64) -> Matrix {
    let mut rng = rng_from_seed(seed);
    let g = gaussian_matrix(n, root.nrows(), &mut rng);
    g * root
}

/// Samples from a uniform distribution over `k` atoms on the sphere of radius
/// `√d`, together with the exact population second moment.
#[derive(Debug, Clone)]
pub struct DiscreteUniformDraw {
    pub samples: Matrix,
    pub atoms: Matrix,
    pub population_second_moment: Matrix,
}

/// Atoms of the discrete-uniform distribution, `k × d`, each row of norm `√d`.
pub fn discrete_uniform_atoms(k: usize, d: usize, seed: u64) -> Result<Matrix> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("discrete uniform needs k >= 2, got {k}")));
    }
    if d < 1 {
        return Err(Error::InvalidArgument("d must be positive".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut atoms = gaussian_matrix(k, d, &mut rng);
    let radius = (d as f64).sqrt();
    for mut row in atoms.row_iter_mut() {
        let norm = row.norm();
        row.scale_mut(radius / norm);
    }
    Ok(atoms)
}

/// `(1/k)·Σ y_j y_jᵀ` over the atoms (rows of `atoms`).
pub fn atoms_second_moment(atoms: &Matrix) -> Matrix {
    let k = atoms.nrows() as f64;
    atoms.transpose() * atoms / k
}

/// `n` uniform picks among the given atoms.
pub fn sample_atoms(atoms: &Matrix, n: usize, seed: u64) -> Matrix {
    let mut rng = rng_from_seed(seed);
    let k = atoms.nrows();
    let mut out = Matrix::zeros(n, atoms.ncols());
    for i in 0..n {
        let pick = rng.random_range(0..k);
        out.set_row(i, &atoms.row(pick));
    }
    out
}

/// Draws the atoms from `seed` and `n` samples from a derived stream.
pub fn sample_discrete_uniform(k: usize, d: usize, n: usize, seed: u64) -> Result<DiscreteUniformDraw> {
    let atoms = discrete_uniform_atoms(k, d, derive_seed(seed, stream::ATOMS, 0))?;
    let samples = sample_atoms(&atoms, n, derive_seed(seed, stream::NODE_SAMPLES, 0));
    let population_second_moment = atoms_second_moment(&atoms);
    Ok(DiscreteUniformDraw {
        samples,
        atoms,
        population_second_moment,
    })
}

/// `(1/n)·Sᵀ·S` for an `n × d` sample matrix.
pub fn local_covariance(samples: &Matrix) -> Result<Matrix> {
    let n = samples.nrows();
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let mut x = samples.tr_mul(samples) / n as f64;
    // Exact symmetry: copy the upper triangle onto the lower one.
    for j in 0..x.ncols() {
        for i in (j + 1)..x.nrows() {
            x[(i, j)] = x[(j, i)];
        }
    }
    Ok(x)
}

/// One worker's data.
#[derive(Debug, Clone)]
pub struct NodeDataset {
    pub node_id: usize,
    pub samples: Option<Matrix>,
    /// The node's symmetric matrix `X̂ⁱ`.
    pub local_matrix: Matrix,
    pub n: usize,
}

impl NodeDataset {
    pub fn from_samples(node_id: usize, samples: Matrix) -> Result<Self> {
        let local_matrix = local_covariance(&samples)?;
        let n = samples.nrows();
        Ok(Self {
            node_id,
            samples: Some(samples),
            local_matrix,
            n,
        })
    }

    /// Dataset that only carries its local matrix (samples discarded).
    pub fn from_matrix(node_id: usize, local_matrix: Matrix, n: usize) -> Self {
        Self {
            node_id,
            samples: None,
            local_matrix,
            n,
        }
    }

    pub fn without_samples(mut self) -> Self {
        self.samples = None;
        self
    }
}

/// `m` Gaussian nodes with `n` samples each from `N(0, X)`. Node `i` samples
/// from `derive_seed(seed, NODE_SAMPLES, i)`.
pub fn gaussian_nodes(x: &Matrix, m: usize, n: usize, seed: u64) -> Result<Vec<NodeDataset>> {
    let root = psd_sqrt(x)?;
    (0..m)
        .map(|i| {
            let samples = sample_with_root(&root, n, derive_seed(seed, stream::NODE_SAMPLES, i as u64));
            NodeDataset::from_samples(i, samples).map(NodeDataset::without_samples)
        })
        .collect()
}

/// `m` nodes drawing `n` samples each from the given atoms.
pub fn atom_nodes(atoms: &Matrix, m: usize, n: usize, seed: u64) -> Result<Vec<NodeDataset>> {
    (0..m)
        .map(|i| {
            let samples = sample_atoms(atoms, n, derive_seed(seed, stream::NODE_SAMPLES, i as u64));
            NodeDataset::from_samples(i, samples).map(NodeDataset::without_samples)
        })
        .collect()
}

/// Quadratic sensing measurements `y_i = ‖X♯ᵀ a_i‖² + noise_i`.
#[derive(Debug, Clone)]
pub struct SensingInstance {
    pub x_sharp: SubspaceEstimate,
    /// `N × d`, one design vector per row.
    pub designs: Matrix,
    pub measurements: Vec<f64>,
    pub truncation_tau: f64,
}

impl SensingInstance {
    /// Builds an instance from explicit parts; `τ = tau_mult·mean(y)`.
    pub fn from_parts(
        x_sharp: SubspaceEstimate,
        designs: Matrix,
        noise: &[f64],
        tau_mult: f64,
    ) -> Result<Self> {
        if designs.ncols() != x_sharp.dim_ambient() {
            return Err(Error::DimensionMismatch(format!(
                "designs have {} columns, X♯ has {} rows",
                designs.ncols(),
                x_sharp.dim_ambient()
            )));
        }
        if designs.nrows() == 0 {
            return Err(Error::InvalidArgument("need at least one measurement".into()));
        }
        if !noise.is_empty() && noise.len() != designs.nrows() {
            return Err(Error::DimensionMismatch("noise length differs from N".into()));
        }
        if !(tau_mult > 0.0) {
            return Err(Error::InvalidArgument("tau_mult must be positive".into()));
        }
        let proj = &designs * x_sharp.basis();
        let measurements: Vec<f64> = proj
            .row_iter()
            .enumerate()
            .map(|(i, row)| row.norm_squared() + noise.get(i).copied().unwrap_or(0.0))
            .collect();
        let mean = measurements.iter().sum::<f64>() / measurements.len() as f64;
        Ok(Self {
            x_sharp,
            designs,
            measurements,
            truncation_tau: tau_mult * mean,
        })
    }

    pub fn len(&self) -> usize {
        self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }

    /// Truncation operator `T(y) = y·1{y ≤ τ}`.
    pub fn truncate(&self, y: f64) -> f64 {
        if y <= self.truncation_tau {
            y
        } else {
            0.0
        }
    }
}

/// Random quadratic sensing instance with Haar `X♯` and Gaussian designs.
pub fn sensing_instance(
    d: usize,
    r: usize,
    n_measurements: usize,
    tau_mult: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<SensingInstance> {
    if n_measurements == 0 {
        return Err(Error::InvalidArgument("N must be positive".into()));
    }
    if !(noise_sd >= 0.0) {
        return Err(Error::InvalidArgument("noise_sd must be non-negative".into()));
    }
    let x_sharp = haar_frame(d, r, derive_seed(seed, stream::BASIS, 0))?;
    let mut rng = rng_from_seed(derive_seed(seed, stream::SENSING, 0));
    let designs = gaussian_matrix(n_measurements, d, &mut rng);
    let noise: Vec<f64> = if noise_sd > 0.0 {
        (0..n_measurements)
            .map(|_| { let z: f64 = StandardNormal.sample(&mut rng); noise_sd * z })
            .collect()
    } else {
        Vec::new()
    };
    SensingInstance::from_parts(x_sharp, designs, &noise, tau_mult)
}

/// Truncated spectral surrogate `(1/|S|)·Σ_{i∈S} T(y_i)·a_i a_iᵀ` over the
/// measurement indices `slice`.
pub fn sensing_surrogate(instance: &SensingInstance, slice: Range<usize>) -> Result<Matrix> {
    if slice.is_empty() || slice.end > instance.len() {
        return Err(Error::InvalidArgument(format!(
            "bad measurement slice {:?} for {} measurements",
            slice,
            instance.len()
        )));
    }
    let d = instance.designs.ncols();
    let count = slice.len();
    // Weighted Gram: Aᵀ·diag(w)·A over the slice.
    let mut weighted = Matrix::zeros(count, d);
    for (row, i) in slice.clone().enumerate() {
        let w = instance.truncate(instance.measurements[i]).max(0.0).sqrt();
        weighted.set_row(row, &(instance.designs.row(i) * w));
    }
    local_covariance(&weighted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn haar_small_and_deterministic() {
        let u = haar_orthogonal(1, 3);
        assert_eq!(u.shape(), (1, 1));
        assert_eq!(u[(0, 0)].abs(), 1.0);
        assert_eq!(haar_orthogonal(6, 17), haar_orthogonal(6, 17));
        assert_ne!(haar_orthogonal(6, 17), haar_orthogonal(6, 18));
        assert!(linalg::orthonormality_defect(&haar_orthogonal(20, 1)) < 1e-12);
    }

    #[test]
    fn haar_first_entry_second_moment() {
        // E|U11|² = 1/d under Haar measure; Var = 2/(d(d+2)) - ... estimated empirically.
        let d = 50;
        let draws = 2000;
        let vals: Vec<f64> = (0..draws)
            .map(|s| haar_orthogonal(d, 1000 + s as u64)[(0, 0)].powi(2))
            .collect();
        let mean = vals.iter().sum::<f64>() / draws as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
        let se = (var / draws as f64).sqrt();
        assert!((mean - 1.0 / d as f64).abs() <= 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn m1_reference_values() {
        let m = model_m1(5, 2, 0.5, 1.0, 0.2).unwrap();
        let expect = [1.0, 0.5, 0.3, 0.27, 0.243];
        for (a, b) in m.eigenvalues.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert!((m.delta - 0.2).abs() < 1e-12);
    }

    #[test]
    fn m1_rank_one_branch() {
        let m = model_m1(4, 1, 0.5, 1.0, 0.2).unwrap();
        assert_eq!(m.eigenvalues[0], 1.0);
        assert!((m.eigenvalues[1] - 0.3).abs() < 1e-15);
        // the realized gap is recorded
        assert!((m.delta - 0.7).abs() < 1e-12);
    }

    #[test]
    fn m1_gap_identity_for_r_ge_2() {
        for r in 2..6 {
            for &delta in &[0.05, 0.2, 0.45] {
                let m = model_m1(30, r, 0.5, 1.0, delta).unwrap();
                assert!((m.eigenvalues[r - 1] - m.eigenvalues[r] - delta).abs() < 1e-12);
                assert!(m.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
            }
        }
    }

    #[test]
    fn m1_rejects_invalid() {
        assert!(model_m1(5, 2, 0.5, 1.0, 0.6).is_err());
        assert!(model_m1(5, 5, 0.5, 1.0, 0.2).is_err());
        assert!(model_m1(5, 2, 0.5, 0.9, 0.2).is_err());
        assert!(model_m1(5, 0, 0.5, 1.0, 0.2).is_err());
    }

    #[test]
    fn m2_reference_values() {
        let m = model_m2(50, 2, 0.1, 4.0).unwrap();
        let alpha = 1.0 - 0.9 / 2.0;
        assert!((alpha - 0.55f64).abs() < 1e-15);
        assert!((m.eigenvalues[2] - 0.495).abs() < 1e-12);
        assert!((m.delta - (1.0 - 0.9 * alpha)).abs() < 1e-12);
        assert_eq!(m.r_star_target(), Some(4.0));
    }

    #[test]
    fn m2_intdim_limit_matches_geometric_sum() {
        // r + (1−δ)α/(1−α), summed independently of the builder.
        let (r, delta, r_star) = (2usize, 0.1f64, 4.0f64);
        let alpha = 1.0 - (1.0 - delta) / (r_star - r as f64);
        let limit = r as f64 + (1.0 - delta) * alpha / (1.0 - alpha);
        let m = model_m2(2000, r, delta, r_star).unwrap();
        assert!((m.intdim() - limit).abs() < 1e-10, "{} vs {limit}", m.intdim());
        // finite truncation sits below the limit
        let small = model_m2(10, r, delta, r_star).unwrap();
        assert!(small.intdim() < limit);
    }

    #[test]
    fn m2_rejects_domain_edges() {
        assert!(matches!(model_m2(10, 2, 1.0, 4.0), Err(Error::InvalidModelParams(_))));
        assert!(matches!(model_m2(10, 2, 0.1, 2.5), Err(Error::InvalidModelParams(_))));
    }

    #[test]
    fn realize_round_trip() {
        let model = model_m1(12, 3, 0.5, 1.0, 0.2).unwrap().with_basis_seed(99);
        let (x, v1) = realize_matrix(&model).unwrap();
        let vals = linalg::symmetric_eigenvalues(&x).unwrap();
        for (a, b) in vals.iter().zip(&model.eigenvalues) {
            assert!((a - b).abs() < 1e-9);
        }
        let (v, _) = linalg::top_eigenspace(&x, 3).unwrap();
        let resid = v1.basis() - v.basis() * (v.basis().transpose() * v1.basis());
        assert!(linalg::spectral_norm(&resid) < 1e-8);
        let trace: f64 = x.trace();
        assert!((trace - model.intdim()).abs() < 1e-10);
    }

    #[test]
    fn gaussian_sampler_edge_cases() {
        let zero = Matrix::zeros(3, 3);
        let s = sample_gaussian(&zero, 5, 1).unwrap();
        assert!(s.iter().all(|&v| v == 0.0));
        let x = Matrix::identity(3, 3);
        assert_eq!(sample_gaussian(&x, 7, 4).unwrap(), sample_gaussian(&x, 7, 4).unwrap());
        let bad = dmatrix![1.0, 0.0; 0.0, -0.5];
        assert!(matches!(sample_gaussian(&bad, 3, 1), Err(Error::NotPsd(_))));
    }

    #[test]
    fn gaussian_sampler_covariance() {
        let x = Matrix::identity(2, 2);
        let s = sample_gaussian(&x, 100_000, 7).unwrap();
        let c = local_covariance(&s).unwrap();
        assert!(linalg::spectral_norm(&(c - x)) < 0.05);
    }

    #[test]
    fn local_covariance_small_cases() {
        let x = local_covariance(&dmatrix![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(x, dmatrix![1.0, 0.0, 0.0; 0.0, 0.0, 0.0; 0.0, 0.0, 0.0]);
        let x = local_covariance(&dmatrix![1.0, 0.0; -1.0, 0.0]).unwrap();
        assert_eq!(x, dmatrix![1.0, 0.0; 0.0, 0.0]);
        let target = dmatrix![1.0, 0.0; 0.0, 0.5];
        let s = sample_gaussian(&target, 100_000, 3).unwrap();
        let c = local_covariance(&s).unwrap();
        assert!(linalg::spectral_norm(&(c - target)) <= 0.05);
    }

    #[test]
    fn discrete_uniform_properties() {
        assert!(sample_discrete_uniform(1, 5, 10, 0).is_err());
        let draw = sample_discrete_uniform(4, 20, 100_000, 5).unwrap();
        for row in draw.samples.row_iter() {
            assert!((row.norm_squared() - 20.0).abs() < 1e-9);
        }
        let emp = local_covariance(&draw.samples).unwrap();
        assert!(linalg::spectral_norm(&(emp - &draw.population_second_moment)) < 0.05);
    }

    #[test]
    fn sensing_forced_instance() {
        let x = SubspaceEstimate::new(dmatrix![1.0; 0.0; 0.0]).unwrap();
        let a = dmatrix![2.0, 1.0, 0.0];
        let inst = SensingInstance::from_parts(x, a, &[], DEFAULT_TAU_MULT).unwrap();
        assert_eq!(inst.measurements, vec![4.0]);
        // untruncated single measurement: y·aaᵀ
        let d = sensing_surrogate(&inst, 0..1).unwrap();
        let expect = dmatrix![16.0, 8.0, 0.0; 8.0, 4.0, 0.0; 0.0, 0.0, 0.0];
        assert!((d - expect).norm() < 1e-12);
    }

    #[test]
    fn sensing_full_truncation_is_zero() {
        let mut inst = sensing_instance(6, 2, 20, 9.0, 0.0, 3).unwrap();
        assert!(inst.measurements.iter().all(|&y| y >= 0.0));
        inst.truncation_tau = 0.0;
        // y = 0 exactly has probability zero, so everything is cut.
        let d = sensing_surrogate(&inst, 0..20).unwrap();
        assert_eq!(d.norm(), 0.0);
    }

    #[test]
    fn sensing_mean_is_rank() {
        let r = 3;
        let inst = sensing_instance(10, r, 100_000, 9.0, 0.0, 21).unwrap();
        let y = &inst.measurements;
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        assert!((mean - r as f64).abs() <= 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn sensing_single_machine_weak_recovery() {
        let (d, r) = (100, 2);
        let inst = sensing_instance(d, r, 8 * r * d, DEFAULT_TAU_MULT, 0.0, 12).unwrap();
        let dn = sensing_surrogate(&inst, 0..inst.len()).unwrap();
        let (v, _) = linalg::top_eigenspace(&dn, r).unwrap();
        let x = inst.x_sharp.basis();
        let resid = v.basis() - x * (x.transpose() * v.basis());
        // noiseless, one machine: clearly better than a random subspace but not yet accurate
        assert!(linalg::spectral_norm(&resid) < 0.75);
    }

    #[test]
    fn psd_closure() {
        let inst = sensing_instance(8, 2, 50, 9.0, 0.1, 2).unwrap();
        let d = sensing_surrogate(&inst, 10..40).unwrap();
        assert!(*linalg::symmetric_eigenvalues(&d).unwrap().last().unwrap() >= PSD_FLOOR);
        let s = sample_gaussian(&Matrix::identity(5, 5), 3, 2).unwrap();
        let c = local_covariance(&s).unwrap();
        assert!(*linalg::symmetric_eigenvalues(&c).unwrap().last().unwrap() >= PSD_FLOOR);
    }

    #[test]
    fn derived_seeds_differ() {
        let a = derive_seed(1, stream::NODE_SAMPLES, 0);
        let b = derive_seed(1, stream::NODE_SAMPLES, 1);
        let c = derive_seed(1, stream::BASIS, 0);
        assert!(a != b && a != c && b != c);
        assert_eq!(a, derive_seed(1, stream::NODE_SAMPLES, 0));
    }
}
