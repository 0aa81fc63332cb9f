//! Local solves and the aggregation rules that combine them.
//!
//! Every aggregator reads an immutable slice of [`LocalSolution`]s; nothing
//! here mutates its inputs, so the coordinator can hand the same snapshot to
//! several aggregators.

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, SubspaceEstimate};
use crate::models::NodeDataset;

/// One node's estimate of the leading subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSolution {
    pub node_id: usize,
    pub estimate: SubspaceEstimate,
    /// `‖X̂ⁱ − X‖₂` when the ground truth is known.
    pub local_error_norm: Option<f64>,
}

impl LocalSolution {
    pub fn new(node_id: usize, estimate: SubspaceEstimate) -> Self {
        Self {
            node_id,
            estimate,
            local_error_norm: None,
        }
    }
}

/// Which aggregation rule produced an [`AggregateSolution`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Central,
    Naive,
    SignFix,
    Procrustes,
    IterativeRefinement,
    ProjectorAverage,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Central => "central",
            Method::Naive => "naive",
            Method::SignFix => "sign_fix",
            Method::Procrustes => "procrustes",
            Method::IterativeRefinement => "iterative_refinement",
            Method::ProjectorAverage => "projector_average",
        }
    }
}

/// Output of an aggregation rule.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateSolution {
    /// `None` when the averaged basis was numerically rank deficient.
    pub estimate: Option<SubspaceEstimate>,
    pub method: Method,
    /// Smallest singular value of the averaged basis before orthonormalization;
    /// `None` for rules that never average bases.
    pub pre_qr_sigma_min: Option<f64>,
    pub rounds_used: usize,
}

impl AggregateSolution {
    pub fn is_degenerate(&self) -> bool {
        self.estimate.is_none()
    }

    /// The estimate, or `Error::Degenerate` for a collapsed average.
    pub fn basis(&self) -> Result<&SubspaceEstimate> {
        self.estimate
            .as_ref()
            .ok_or(Error::Degenerate(self.pre_qr_sigma_min.unwrap_or(0.0)))
    }

    fn from_eigenspace(estimate: SubspaceEstimate, method: Method) -> Self {
        Self {
            estimate: Some(estimate),
            method,
            pre_qr_sigma_min: None,
            rounds_used: 1,
        }
    }
}

fn smallest_singular_value(a: &Matrix) -> f64 {
    linalg::singular_values(a).last().copied().unwrap_or(0.0)
}

fn check_shapes(solutions: &[LocalSolution]) -> Result<(usize, usize)> {
    let first = solutions
        .first()
        .ok_or_else(|| Error::InvalidArgument("need at least one local solution".into()))?;
    let shape = first.estimate.basis().shape();
    for s in solutions {
        if s.estimate.basis().shape() != shape {
            return Err(Error::DimensionMismatch(format!(
                "node {} has a {:?} basis, node {} has {:?}",
                s.node_id,
                s.estimate.basis().shape(),
                first.node_id,
                shape
            )));
        }
    }
    Ok(shape)
}

fn average(mats: impl Iterator<Item = Matrix>, rows: usize, cols: usize, count: usize) -> Matrix {
    let mut acc = Matrix::zeros(rows, cols);
    for m in mats {
        acc += m;
    }
    acc / count as f64
}

/// Leading `r`-dimensional eigenspace of a node's symmetric matrix.
pub fn solve_local(node_id: usize, x_hat: &Matrix, r: usize) -> Result<LocalSolution> {
    let (estimate, _) = linalg::top_eigenspace(x_hat, r)?;
    Ok(LocalSolution::new(node_id, estimate))
}

/// Like [`solve_local`], also recording `‖X̂ⁱ − X‖₂` against a known truth.
pub fn solve_local_with_truth(node_id: usize, x_hat: &Matrix, x: &Matrix, r: usize) -> Result<LocalSolution> {
    let mut sol = solve_local(node_id, x_hat, r)?;
    sol.local_error_norm = Some(linalg::spectral_norm_symmetric(&(x_hat - x))?);
    Ok(sol)
}

fn orthonormalize_average(v_bar: Matrix, method: Method, allow_svd_fallback: bool) -> AggregateSolution {
    let sigma_min = smallest_singular_value(&v_bar);
    let estimate = match linalg::qr_orthonormalize(&v_bar) {
        Ok((q, _)) => Some(q),
        Err(Error::RankDeficient(rank)) => {
            log::debug!("{} average is rank deficient (rank {rank})", method.name());
            if allow_svd_fallback {
                linalg::svd_orthonormalize(&v_bar).ok()
            } else {
                None
            }
        }
        Err(e) => {
            log::warn!("{} average could not be orthonormalized: {e}", method.name());
            None
        }
    };
    AggregateSolution {
        estimate,
        method,
        pre_qr_sigma_min: Some(sigma_min),
        rounds_used: 1,
    }
}

/// Plain average of the local bases followed by QR. A collapsed average is
/// reported as a degenerate aggregate rather than an error.
pub fn naive_average(solutions: &[LocalSolution]) -> Result<AggregateSolution> {
    let (d, r) = check_shapes(solutions)?;
    let v_bar = average(
        solutions.iter().map(|s| s.estimate.basis().clone()),
        d,
        r,
        solutions.len(),
    );
    Ok(orthonormalize_average(v_bar, Method::Naive, false))
}

/// Rank-one average with each vector's sign matched to the reference vector.
/// A zero inner product counts as a positive sign.
pub fn sign_fix_average(solutions: &[LocalSolution], reference_index: usize) -> Result<AggregateSolution> {
    let (d, r) = check_shapes(solutions)?;
    if r != 1 {
        return Err(Error::Shape(format!("sign fixing needs r = 1, got r = {r}")));
    }
    let reference = solutions
        .get(reference_index)
        .ok_or_else(|| Error::InvalidArgument(format!("reference index {reference_index} out of range")))?
        .estimate
        .basis();
    let v_bar = average(
        solutions.iter().map(|s| {
            let v = s.estimate.basis();
            let ip = v.dot(reference);
            if ip < 0.0 {
                -v
            } else {
                v.clone()
            }
        }),
        d,
        1,
        solutions.len(),
    );
    Ok(orthonormalize_average(v_bar, Method::SignFix, true))
}

/// Each local basis rotated onto `reference` by orthogonal Procrustes.
pub fn align_to_reference(solutions: &[LocalSolution], reference: &SubspaceEstimate) -> Result<Vec<Matrix>> {
    solutions
        .iter()
        .map(|s| align_one(&s.estimate, reference))
        .collect()
}

/// `V̂·Z` with `Z = argmin_Z ‖V̂·Z − reference‖_F`.
pub fn align_one(estimate: &SubspaceEstimate, reference: &SubspaceEstimate) -> Result<Matrix> {
    let z = linalg::procrustes_rotation(estimate, reference)?;
    Ok(estimate.basis() * z.matrix())
}

/// Mean of already aligned bases, orthonormalized by QR with an SVD fallback.
pub fn average_aligned(aligned: &[Matrix], method: Method) -> Result<AggregateSolution> {
    let first = aligned
        .first()
        .ok_or_else(|| Error::InvalidArgument("nothing to average".into()))?;
    let (d, r) = first.shape();
    if aligned.iter().any(|m| m.shape() != (d, r)) {
        return Err(Error::DimensionMismatch("aligned bases differ in shape".into()));
    }
    let v_bar = average(aligned.iter().cloned(), d, r, aligned.len());
    Ok(orthonormalize_average(v_bar, method, true))
}

/// Procrustes fixing: align every local basis to `reference`, average, QR.
pub fn procrustes_fix_average(
    solutions: &[LocalSolution],
    reference: &SubspaceEstimate,
) -> Result<AggregateSolution> {
    let (d, r) = check_shapes(solutions)?;
    if reference.basis().shape() != (d, r) {
        return Err(Error::DimensionMismatch(format!(
            "reference is {:?}, local bases are {:?}",
            reference.basis().shape(),
            (d, r)
        )));
    }
    let aligned = align_to_reference(solutions, reference)?;
    average_aligned(&aligned, Method::Procrustes)
}

/// Procrustes fixing against the first local solution.
pub fn procrustes_fix_default(solutions: &[LocalSolution]) -> Result<AggregateSolution> {
    let reference = solutions
        .first()
        .ok_or_else(|| Error::InvalidArgument("need at least one local solution".into()))?
        .estimate
        .clone();
    procrustes_fix_average(solutions, &reference)
}

/// Procrustes fixing repeated `n_iter` times, each round using the previous
/// round's output as the reference (the first round uses node 0).
pub fn iterative_refinement(solutions: &[LocalSolution], n_iter: usize) -> Result<AggregateSolution> {
    if n_iter < 1 {
        return Err(Error::InvalidArgument("n_iter must be at least 1".into()));
    }
    check_shapes(solutions)?;
    let mut reference = solutions[0].estimate.clone();
    let mut last = None;
    for round in 0..n_iter {
        let mut agg = procrustes_fix_average(solutions, &reference)?;
        agg.method = Method::IterativeRefinement;
        agg.rounds_used = round + 1;
        match &agg.estimate {
            Some(est) => reference = est.clone(),
            None => return Ok(agg),
        }
        last = Some(agg);
    }
    Ok(last.expect("n_iter >= 1"))
}

/// Top-`r` eigenspace of the averaged spectral projector `(1/m)Σ V̂ⁱV̂ⁱᵀ`.
pub fn projector_average(solutions: &[LocalSolution]) -> Result<AggregateSolution> {
    let (d, r) = check_shapes(solutions)?;
    let p_bar = average(
        solutions.iter().map(|s| s.estimate.projector()),
        d,
        d,
        solutions.len(),
    );
    let (estimate, _) = linalg::top_eigenspace(&p_bar, r)?;
    Ok(AggregateSolution::from_eigenspace(estimate, Method::ProjectorAverage))
}

/// `(1/m)·Σ X̂ⁱ`.
pub fn pooled_matrix(local_matrices: &[&Matrix]) -> Result<Matrix> {
    let first = local_matrices
        .first()
        .ok_or_else(|| Error::InvalidArgument("need at least one dataset".into()))?;
    let shape = first.shape();
    if local_matrices.iter().any(|m| m.shape() != shape) {
        return Err(Error::DimensionMismatch("local matrices differ in shape".into()));
    }
    Ok(average(
        local_matrices.iter().map(|m| (*m).clone()),
        shape.0,
        shape.1,
        local_matrices.len(),
    ))
}

/// Centralized reference: top-`r` eigenspace of the pooled local matrices.
pub fn central_estimator(datasets: &[NodeDataset], r: usize) -> Result<AggregateSolution> {
    let mats: Vec<&Matrix> = datasets.iter().map(|d| &d.local_matrix).collect();
    let pooled = pooled_matrix(&mats)?;
    let (estimate, _) = linalg::top_eigenspace(&pooled, r)?;
    Ok(AggregateSolution::from_eigenspace(estimate, Method::Central))
}

/// Aligns arbitrary `p × q` factors to `factors[reference_index]` with
/// `q × q` orthogonal Procrustes and returns their plain mean. The result is
/// not orthonormalized.
pub fn generic_align_average(factors: &[Matrix], reference_index: usize) -> Result<Matrix> {
    let reference = factors
        .get(reference_index)
        .ok_or_else(|| Error::InvalidArgument(format!("reference index {reference_index} out of range")))?;
    let shape = reference.shape();
    let mut acc = Matrix::zeros(shape.0, shape.1);
    for f in factors {
        if f.shape() != shape {
            return Err(Error::DimensionMismatch(format!(
                "factor {:?} vs reference {:?}",
                f.shape(),
                shape
            )));
        }
        let z = linalg::procrustes_matrix(f, reference)?;
        acc += f * z;
    }
    Ok(acc / factors.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::subspace_dist2;
    use crate::models;
    use nalgebra::{dmatrix, dvector};

    fn frame(d: usize, r: usize, seed: u64) -> SubspaceEstimate {
        models::haar_frame(d, r, seed).unwrap()
    }

    fn orth(r: usize, seed: u64) -> Matrix {
        models::haar_orthogonal(r, seed)
    }

    fn sols(bases: Vec<Matrix>) -> Vec<LocalSolution> {
        bases
            .into_iter()
            .enumerate()
            .map(|(i, b)| LocalSolution::new(i, SubspaceEstimate::new(b).unwrap()))
            .collect()
    }

    #[test]
    fn local_solve_cases() {
        let x = Matrix::from_diagonal(&dvector![3.0, 2.0, 1.0]);
        let s = solve_local(0, &x, 1).unwrap();
        assert_eq!(s.estimate.basis(), &dmatrix![1.0; 0.0; 0.0]);

        let model = models::model_m1(20, 3, 0.5, 1.0, 0.2).unwrap().with_basis_seed(4);
        let (x, v1) = models::realize_matrix(&model).unwrap();
        let s = solve_local_with_truth(0, &x, &x, 3).unwrap();
        assert!(subspace_dist2(&s.estimate, &v1).unwrap() <= 1e-8);
        assert_eq!(s.local_error_norm, Some(0.0));
    }

    #[test]
    fn local_solve_gaussian_node_is_informative() {
        let model = models::model_m1(50, 2, 0.5, 1.0, 0.2).unwrap().with_basis_seed(8);
        let (x, v1) = models::realize_matrix(&model).unwrap();
        let node = &models::gaussian_nodes(&x, 1, 500, 3).unwrap()[0];
        let s = solve_local(0, &node.local_matrix, 2).unwrap();
        assert!(subspace_dist2(&s.estimate, &v1).unwrap() <= 0.8);
    }

    #[test]
    fn naive_sign_cancellation_is_degenerate() {
        let v = dmatrix![0.6; 0.8; 0.0];
        let agg = naive_average(&sols(vec![v.clone(), -v])).unwrap();
        assert!(agg.is_degenerate());
        assert_eq!(agg.pre_qr_sigma_min, Some(0.0));
        assert!(matches!(agg.basis(), Err(Error::Degenerate(_))));
    }

    #[test]
    fn naive_identical_inputs() {
        let v = frame(8, 3, 1);
        let agg = naive_average(&sols(vec![v.basis().clone(); 4])).unwrap();
        assert!(subspace_dist2(agg.basis().unwrap(), &v).unwrap() <= 1e-9);
    }

    #[test]
    fn reflection_family_breaks_naive_but_not_procrustes() {
        // Half the nodes report V, half V·diag(−1, 1): the average loses column 0.
        let v = frame(10, 2, 6);
        let flip = Matrix::from_diagonal(&dvector![-1.0, 1.0]);
        let bases = vec![
            v.basis().clone(),
            v.basis() * &flip,
            v.basis().clone(),
            v.basis() * &flip,
        ];
        let s = sols(bases);
        let naive = naive_average(&s).unwrap();
        assert!(naive.is_degenerate() || subspace_dist2(naive.basis().unwrap(), &v).unwrap() > 0.5);
        let fixed = procrustes_fix_default(&s).unwrap();
        assert!(subspace_dist2(fixed.basis().unwrap(), &v).unwrap() <= 1e-8);
    }

    #[test]
    fn sign_fix_cases() {
        let v = dmatrix![0.0; 0.6; 0.8];
        let agg = sign_fix_average(&sols(vec![v.clone(), -v.clone(), v.clone()]), 0).unwrap();
        assert!((agg.basis().unwrap().basis() - &v).norm() < 1e-15);
        let agg = sign_fix_average(&sols(vec![v.clone()]), 0).unwrap();
        assert!((agg.basis().unwrap().basis() - &v).norm() < 1e-15);
        let bad = sign_fix_average(&sols(vec![frame(4, 2, 1).into_inner()]), 0);
        assert!(matches!(bad, Err(Error::Shape(_))));
    }

    #[test]
    fn sign_fix_matches_procrustes_for_rank_one() {
        let truth = frame(30, 1, 2);
        let bases: Vec<Matrix> = (0..20)
            .map(|i| {
                let noise = models::haar_frame(30, 1, 100 + i).unwrap().into_inner() * 0.3;
                let sign = if i % 3 == 0 { -1.0 } else { 1.0 };
                let v = (truth.basis() + noise) * sign;
                let n = v.norm();
                v / n
            })
            .collect();
        let s = sols(bases);
        let a = sign_fix_average(&s, 0).unwrap();
        let b = procrustes_fix_default(&s).unwrap();
        assert!(subspace_dist2(a.basis().unwrap(), b.basis().unwrap()).unwrap() <= 1e-10);
    }

    #[test]
    fn procrustes_pure_ambiguity() {
        let v = frame(12, 3, 9);
        let bases: Vec<Matrix> = (0..5).map(|i| v.basis() * orth(3, 50 + i)).collect();
        let agg = procrustes_fix_default(&sols(bases)).unwrap();
        assert!(subspace_dist2(agg.basis().unwrap(), &v).unwrap() <= 1e-8);
        let single = procrustes_fix_default(&sols(vec![v.basis().clone()])).unwrap();
        assert!(subspace_dist2(single.basis().unwrap(), &v).unwrap() <= 1e-12);
    }

    #[test]
    fn procrustes_rejects_bad_reference() {
        let s = sols(vec![frame(6, 2, 1).into_inner()]);
        assert!(matches!(
            procrustes_fix_average(&s, &frame(6, 3, 2)),
            Err(Error::DimensionMismatch(_))
        ));
        let mixed = vec![
            LocalSolution::new(0, frame(6, 2, 1)),
            LocalSolution::new(1, frame(6, 3, 1)),
        ];
        assert!(matches!(procrustes_fix_default(&mixed), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn refinement_unrolls_to_one_step() {
        let truth = frame(15, 2, 3);
        let bases: Vec<Matrix> = (0..6)
            .map(|i| {
                let noisy = truth.basis() + models::haar_frame(15, 2, 70 + i).unwrap().into_inner() * 0.1;
                linalg::qr_orthonormalize(&noisy).unwrap().0.into_inner() * orth(2, 90 + i)
            })
            .collect();
        let s = sols(bases);
        let one = iterative_refinement(&s, 1).unwrap();
        let alg1 = procrustes_fix_default(&s).unwrap();
        assert_eq!(one.basis().unwrap(), alg1.basis().unwrap());
        assert_eq!(one.rounds_used, 1);
        assert_eq!(iterative_refinement(&s, 4).unwrap().rounds_used, 4);
        assert!(iterative_refinement(&s, 0).is_err());
    }

    #[test]
    fn refinement_fixed_point_on_noiseless_inputs() {
        let v = frame(10, 3, 4);
        let bases: Vec<Matrix> = (0..4).map(|i| v.basis() * orth(3, 20 + i)).collect();
        let s = sols(bases);
        let a = iterative_refinement(&s, 1).unwrap();
        let b = iterative_refinement(&s, 2).unwrap();
        assert!(subspace_dist2(a.basis().unwrap(), b.basis().unwrap()).unwrap() <= 1e-10);
    }

    #[test]
    fn projector_average_cases() {
        let v = frame(9, 2, 5);
        let bases: Vec<Matrix> = (0..4).map(|i| v.basis() * orth(2, 30 + i)).collect();
        let agg = projector_average(&sols(bases)).unwrap();
        assert!(subspace_dist2(agg.basis().unwrap(), &v).unwrap() <= 1e-8);
        let single = projector_average(&sols(vec![v.basis().clone()])).unwrap();
        assert!(subspace_dist2(single.basis().unwrap(), &v).unwrap() <= 1e-8);
    }

    #[test]
    fn central_cases() {
        let model = models::model_m1(20, 2, 0.5, 1.0, 0.2).unwrap().with_basis_seed(2);
        let (x, v1) = models::realize_matrix(&model).unwrap();
        let noiseless = vec![NodeDataset::from_matrix(0, x.clone(), 1), NodeDataset::from_matrix(1, x.clone(), 1)];
        let agg = central_estimator(&noiseless, 2).unwrap();
        assert!(subspace_dist2(agg.basis().unwrap(), &v1).unwrap() <= 1e-8);

        let nodes = models::gaussian_nodes(&x, 1, 50, 3).unwrap();
        let c = central_estimator(&nodes, 2).unwrap();
        let l = solve_local(0, &nodes[0].local_matrix, 2).unwrap();
        assert_eq!(c.basis().unwrap(), &l.estimate);
    }

    #[test]
    fn generic_alignment_undoes_rotation() {
        let z = models::haar_frame(10, 3, 1).unwrap().into_inner() * dmatrix![2.0, 0.0, 0.0; 0.0, 1.0, 0.0; 0.0, 0.0, 0.5];
        let q = orth(3, 2);
        let out = generic_align_average(&[z.clone(), &z * q], 0).unwrap();
        assert!((out - &z).norm() <= 1e-9);
        let single = generic_align_average(&[z.clone()], 0).unwrap();
        assert!((single - &z).norm() <= 1e-12);
        assert!(generic_align_average(&[z.clone()], 1).is_err());
    }

    #[test]
    fn generic_alignment_reduces_noise() {
        use rand_distr::{Distribution, StandardNormal};
        let z = models::haar_frame(20, 3, 11).unwrap().into_inner() * 3.0;
        let mut rng = models::rng_from_seed(5);
        let factors: Vec<Matrix> = (0..10)
            .map(|i| {
                let noise = Matrix::from_fn(20, 3, |_, _| 0.01 * Distribution::<f64>::sample(&StandardNormal, &mut rng));
                (&z + noise) * orth(3, 300 + i)
            })
            .collect();
        let out = generic_align_average(&factors, 0).unwrap();
        // the reference's own rotation survives averaging; undo it before comparing
        let undo = linalg::procrustes_matrix(&out, &z).unwrap();
        let avg_err = (&out * undo - &z).norm();
        let mut singles: Vec<f64> = factors
            .iter()
            .map(|f| {
                let zf = linalg::procrustes_matrix(f, &z).unwrap();
                (f * zf - &z).norm()
            })
            .collect();
        singles.sort_by(f64::total_cmp);
        assert!(avg_err < singles[singles.len() / 2], "{avg_err} vs {:?}", singles);
    }

    #[test]
    fn aggregators_leave_inputs_untouched() {
        let s = sols((0..3).map(|i| frame(8, 2, i)).map(|f| f.into_inner()).collect());
        let snapshot = s.clone();
        let _ = naive_average(&s).unwrap();
        let _ = procrustes_fix_default(&s).unwrap();
        let _ = projector_average(&s).unwrap();
        assert_eq!(s, snapshot);
    }
}
