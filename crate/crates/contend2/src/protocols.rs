//! The optimal two-device protocols and the parametric families they are
//! drawn from.
//!
//! Under the average objective the optimal idle masses are a quadratic in the
//! slot index; under the makespan objective they follow a three-term linear
//! recurrence whose characteristic roots are unit-modulus complex conjugates.
//! Each family is pinned down by boundary conditions plus one consistency
//! equation, and the optimal members' constants are roots of small integer
//! cubics. This module builds both families, solves the cubics with a
//! deterministic bracketed solver, and exposes the three optimal protocols.

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::analytic;
use crate::policy::{MassSequence, PolicyError, ProbSequence};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ProtocolError {
    #[error("polynomial does not change sign on [{lo}, {hi}]")]
    NoSignChange { lo: f64, hi: f64 },
    #[error("family masses are not a valid strictly decreasing mass sequence: {0}")]
    NonMonotone(#[from] PolicyError),
    #[error("gamma {0} lies outside the feasible interval (1/4, 1/3]")]
    GammaOutOfInterval(f64),
    #[error("family boundary conditions violated (residual {residual:.3e})")]
    BoundaryConditions { residual: f64 },
    #[error("conjugate terms failed to cancel (imaginary residue {residual:.3e})")]
    ImaginaryResidue { residual: f64 },
    #[error("family cost denominator vanishes; the induced policy collides forever")]
    DegenerateCost,
}

/// A cubic `c3 x^3 + c2 x^2 + c1 x + c0` together with a bracket expected to
/// straddle exactly one of its roots.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubicSpec {
    /// Coefficients `(c3, c2, c1, c0)`, highest degree first.
    pub coefficients: [f64; 4],
    /// Closed interval `[lo, hi]`.
    pub bracket: (f64, f64),
}

impl CubicSpec {
    pub fn new(coefficients: [f64; 4], bracket: (f64, f64)) -> Self {
        assert!(bracket.0 < bracket.1, "bracket must be a nonempty interval");
        Self {
            coefficients,
            bracket,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let [c3, c2, c1, c0] = self.coefficients;
        ((c3 * x + c2) * x + c1) * x + c0
    }

    pub fn eval_derivative(&self, x: f64) -> f64 {
        let [c3, c2, c1, _] = self.coefficients;
        (3.0 * c3 * x + 2.0 * c2) * x + c1
    }

    /// Largest coefficient magnitude, the natural residual scale.
    pub fn coefficient_scale(&self) -> f64 {
        self.coefficients
            .iter()
            .fold(0.0, |acc, c| acc.max(c.abs()))
    }
}

/// Defining cubic of the reciprocal optimal makespan cost:
/// `3x^3 - 12x^2 + 10x - 2` on `[1/4, 1/3]`.
pub fn gamma_cubic() -> CubicSpec {
    CubicSpec::new([3.0, -12.0, 10.0, -2.0], (0.25, 1.0 / 3.0))
}

/// Defining cubic of the makespan protocol's first transmit probability:
/// `x^3 + 7x^2 - 21x + 9` on `[0, 1]`.
pub fn alpha_cubic() -> CubicSpec {
    CubicSpec::new([1.0, 7.0, -21.0, 9.0], (0.0, 1.0))
}

/// Defining cubic of the makespan protocol's second transmit probability:
/// `4x^3 - 8x^2 + 3` on `[0, 1]`.
pub fn beta_cubic() -> CubicSpec {
    CubicSpec::new([4.0, -8.0, 0.0, 3.0], (0.0, 1.0))
}

/// Finds the root straddled by the bracket: bisection to near machine width,
/// then Newton polish. Deterministic; the returned `x` satisfies
/// `|poly(x)| <= tol * coefficient_scale`.
pub fn solve_cubic_in_bracket(spec: &CubicSpec, tol: f64) -> Result<f64, ProtocolError> {
    assert!(tol > 0.0, "tolerance must be positive");
    let (mut lo, mut hi) = spec.bracket;
    let mut f_lo = spec.eval(lo);
    let f_hi = spec.eval(hi);
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if (f_lo < 0.0) == (f_hi < 0.0) {
        return Err(ProtocolError::NoSignChange { lo, hi });
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break; // bracket narrowed to floating-point resolution
        }
        let f_mid = spec.eval(mid);
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if (f_mid < 0.0) == (f_lo < 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..20 {
        let f = spec.eval(x);
        let slope = spec.eval_derivative(x);
        if slope == 0.0 {
            break;
        }
        let next = x - f / slope;
        if !next.is_finite() || next < spec.bracket.0 || next > spec.bracket.1 {
            break;
        }
        let moved = (next - x).abs();
        x = next;
        if moved <= f64::EPSILON * x.abs() {
            break;
        }
    }
    assert!(
        spec.eval(x).abs() <= tol.max(1e-12) * spec.coefficient_scale(),
        "root residual exceeds tolerance"
    );
    Ok(x)
}

/// A member of the quadratic-mass family for the average objective:
/// `m_k = a0 + a1 k + a2 k^2` for `-1 <= k <= N`, with `m_{-1} = 1` and
/// `m_N = 0` folded into `a0`, `a1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AvgFamilyPoint {
    n: u32,
    a2: f64,
    a0: f64,
    a1: f64,
}

impl AvgFamilyPoint {
    pub fn new(n: u32, a2: f64) -> Self {
        assert!(n >= 1, "the quadratic family needs N >= 1");
        let nf = f64::from(n);
        let a0 = (nf - a2 * (nf * nf + nf)) / (nf + 1.0);
        let a1 = (-a2 * (nf * nf - 1.0) - 1.0) / (nf + 1.0);
        Self { n, a2, a0, a1 }
    }

    /// The interval of `a2` for which the family masses decrease:
    /// `[-1/(N + N^2), 1/(N + N^2)]`.
    pub fn constraint_interval(n: u32) -> (f64, f64) {
        let nf = f64::from(n);
        let bound = 1.0 / (nf + nf * nf);
        (-bound, bound)
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn a2(&self) -> f64 {
        self.a2
    }

    pub fn a0(&self) -> f64 {
        self.a0
    }

    pub fn a1(&self) -> f64 {
        self.a1
    }

    pub fn mass_at(&self, k: i64) -> f64 {
        let kf = k as f64;
        self.a0 + self.a1 * kf + self.a2 * kf * kf
    }
}

/// Materializes the quadratic family member as a mass sequence.
///
/// At the upper constraint endpoint the quadratic touches zero one index
/// early; the duplicate zero is dropped, since removing an equal mass leaves
/// the induced policy unchanged. Anything else that breaks strict decrease is
/// an error.
pub fn avg_family_masses(pt: &AvgFamilyPoint) -> Result<MassSequence, ProtocolError> {
    let mut raw: Vec<f64> = (-1..=i64::from(pt.n)).map(|k| pt.mass_at(k)).collect();
    for m in raw.iter_mut() {
        if (*m - 1.0).abs() <= 1e-12 {
            *m = 1.0;
        } else if m.abs() <= 1e-12 {
            *m = 0.0;
        }
    }
    while raw.len() > 2 && raw[raw.len() - 2] == 0.0 {
        raw.pop();
    }
    Ok(MassSequence::new(raw)?)
}

/// Expected average cost of the family member `(N, a2)` in closed form:
/// `(N+1)(N+2)(a2 N(N+1) - 3) / (2N (a2^2 (N+1)^2 (N+2) - 3))`.
pub fn avg_family_cost(n: u32, a2: f64) -> Result<f64, ProtocolError> {
    avg_family_masses(&AvgFamilyPoint::new(n, a2))?;
    let nf = f64::from(n);
    let denominator = 2.0 * nf * (a2 * a2 * (nf + 1.0) * (nf + 1.0) * (nf + 2.0) - 3.0);
    if denominator.abs() <= 1e-12 {
        return Err(ProtocolError::DegenerateCost);
    }
    Ok((nf + 1.0) * (nf + 2.0) * (a2 * nf * (nf + 1.0) - 3.0) / denominator)
}

/// One row of the per-N exploration table for the average objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AvgTableRow {
    pub n: u32,
    pub a2: f64,
    pub cost: f64,
}

/// Best `a2` for fixed `N`: the closed-form stationary point when it is real
/// and inside the constraint interval, otherwise the upper endpoint
/// `1/(N + N^2)` (the cost is decreasing in `a2` across the whole interval in
/// that case).
fn optimal_a2_for(n: u32) -> f64 {
    let nf = f64::from(n);
    let (lo, hi) = AvgFamilyPoint::constraint_interval(n);
    let discriminant =
        3.0 * (-nf.powi(5) - nf.powi(4) + 13.0 * nf.powi(3) + 37.0 * nf * nf + 36.0 * nf + 12.0);
    if discriminant >= 0.0 {
        let numerator = 3.0 * nf * nf + 9.0 * nf + 6.0 - discriminant.sqrt();
        let denominator = nf.powi(4) + 4.0 * nf.powi(3) + 5.0 * nf * nf + 2.0 * nf;
        let stationary = numerator / denominator;
        if stationary > lo && stationary < hi {
            return stationary;
        }
    }
    hi
}

/// Per-N inner optimization of the average-objective family, rows
/// `N = 1..=n_max`.
pub fn avg_table(n_max: u32) -> Vec<AvgTableRow> {
    assert!(n_max >= 1, "the table needs at least one row");
    (1..=n_max)
        .map(|n| {
            let a2 = optimal_a2_for(n);
            let cost = avg_family_cost(n, a2).expect("the per-N optimal a2 is feasible");
            AvgTableRow { n, a2, cost }
        })
        .collect()
}

/// The optimal protocol for the average objective:
/// `p = ((4 - sqrt 6)/3, (1 + sqrt 6)/5, 1)` with expected cost
/// `(3 + sqrt 6)/2 ≈ 2.724745`.
pub fn optimal_avg_protocol() -> (ProbSequence, f64) {
    let a2 = 0.5 - 1.0 / 6.0f64.sqrt();
    let point = AvgFamilyPoint::new(2, a2);
    let masses = avg_family_masses(&point).expect("the optimal point is feasible");
    let cost = avg_family_cost(2, a2).expect("the optimal point is feasible");
    let check = analytic::expected_avg(&masses).expect("the optimal masses are non-degenerate");
    assert!(
        (cost - check).abs() <= 1e-12,
        "family cost {cost} disagrees with the evaluator {check}"
    );
    (masses.to_probs(), cost)
}

/// The optimal protocol for the first-success objective: transmit with
/// probability 1/2 until successful, expected cost 2.
pub fn optimal_min_protocol() -> (f64, f64) {
    (0.5, 2.0)
}

/// A member of the makespan family: masses `m_k = C1 x1^k + C2 x2^k + 1` for
/// `-1 <= k <= N`, then zero. `x1, x2` are the conjugate unit-modulus roots of
/// `x^2 - (2 - gamma) x + 1`; `C1, C2` solve the boundary conditions
/// `m_{-1} = 1` and `m_{N+1} = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxFamilyPoint {
    n: u32,
    gamma: f64,
    x1: Complex64,
    x2: Complex64,
    c1: Complex64,
    c2: Complex64,
}

impl MaxFamilyPoint {
    pub fn new(n: u32, gamma: f64) -> Result<Self, ProtocolError> {
        if !(gamma > 0.25 && gamma <= 1.0 / 3.0 + 1e-12) {
            return Err(ProtocolError::GammaOutOfInterval(gamma));
        }
        // Roots of x^2 - (2 - gamma) x + 1: sum 2 - gamma, product 1, so a
        // conjugate pair on the unit circle.
        let re = (2.0 - gamma) / 2.0;
        let im = (4.0 * gamma - gamma * gamma).sqrt() / 2.0;
        let x1 = Complex64::new(re, im);
        let x2 = x1.conj();
        let denominator = x1.powu(n + 2) - x2.powu(n + 2);
        let c1 = -x1 / denominator;
        let c2 = -c1 * x2 / x1;
        let point = Self {
            n,
            gamma,
            x1,
            x2,
            c1,
            c2,
        };
        // x1 x2 = 1 turns the inverse powers in the first boundary condition
        // into plain conjugate powers.
        let anchor = (point.c1 * point.x2 + point.c2 * point.x1).norm();
        let terminal =
            (point.c1 * point.x1.powu(n + 1) + point.c2 * point.x2.powu(n + 1) + 1.0).norm();
        let residual = anchor.max(terminal);
        if residual > 1e-10 {
            return Err(ProtocolError::BoundaryConditions { residual });
        }
        Ok(point)
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn x1(&self) -> Complex64 {
        self.x1
    }

    pub fn x2(&self) -> Complex64 {
        self.x2
    }

    pub fn c1(&self) -> Complex64 {
        self.c1
    }

    pub fn c2(&self) -> Complex64 {
        self.c2
    }

    fn mass_at(&self, k: i32) -> Complex64 {
        self.c1 * self.x1.powi(k) + self.c2 * self.x2.powi(k) + 1.0
    }
}

/// Materializes the makespan family member as a mass sequence of length
/// `N + 3` (counting `m_{-1} = 1` and `m_{N+1} = 0`). The conjugate terms
/// must cancel to real values; infeasible `(N, gamma)` pairs surface as
/// `NonMonotone`.
pub fn max_family_masses(pt: &MaxFamilyPoint) -> Result<MassSequence, ProtocolError> {
    let top = i32::try_from(pt.n).expect("family size fits i32") + 1;
    let mut raw = Vec::with_capacity(pt.n as usize + 3);
    for k in -1..=top {
        let value = pt.mass_at(k);
        if value.im.abs() > 1e-10 {
            return Err(ProtocolError::ImaginaryResidue {
                residual: value.im.abs(),
            });
        }
        raw.push(value.re);
    }
    // The boundary-condition check bounds the anchor error, so snapping the
    // endpoints to their exact values loses nothing.
    raw[0] = 1.0;
    let last = raw.len() - 1;
    raw[last] = 0.0;
    Ok(MassSequence::new(raw)?)
}

/// The quantity that must vanish at an optimal makespan family member:
/// `gamma (N + 2) + m_N - 1`. Its root in `gamma` characterizes the optimal
/// member for each `N`.
pub fn max_consistency_residual(n: u32, gamma: f64) -> Result<f64, ProtocolError> {
    let point = MaxFamilyPoint::new(n, gamma)?;
    let masses = max_family_masses(&point)?;
    let values = masses.masses();
    let m_n = values[values.len() - 2];
    Ok(gamma * (f64::from(n) + 2.0) + m_n - 1.0)
}

/// Solves the consistency equation for the given `N` by bisection over the
/// feasible gamma interval. Only `N = 0` and `N = 1` admit roots.
pub fn solve_max_gamma(n: u32) -> Result<f64, ProtocolError> {
    let mut lo = 0.25 + 1e-9;
    let mut hi = 1.0 / 3.0;
    let mut r_lo = max_consistency_residual(n, lo)?;
    let r_hi = max_consistency_residual(n, hi)?;
    if r_lo == 0.0 {
        return Ok(lo);
    }
    if r_hi == 0.0 {
        return Ok(hi);
    }
    if (r_lo < 0.0) == (r_hi < 0.0) {
        return Err(ProtocolError::NoSignChange { lo, hi });
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let r_mid = max_consistency_residual(n, mid)?;
        if r_mid == 0.0 {
            return Ok(mid);
        }
        if (r_mid < 0.0) == (r_lo < 0.0) {
            lo = mid;
            r_lo = r_mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// The optimal protocol for the makespan objective: `p = (alpha, beta, 1)`
/// with expected cost `1/gamma ≈ 3.336406`, where the three constants are the
/// bracketed roots of their defining cubics.
///
/// The reciprocal cost is solved twice — from its cubic and from the
/// consistency equation — and the `N = 0` alternative (cost `2 + sqrt 2`) is
/// verified to be worse.
pub fn optimal_max_protocol() -> (ProbSequence, f64) {
    let gamma = solve_cubic_in_bracket(&gamma_cubic(), 1e-12)
        .expect("gamma cubic changes sign on [1/4, 1/3]");
    let gamma_check = solve_max_gamma(1).expect("the N = 1 consistency equation has a root");
    assert!(
        (gamma - gamma_check).abs() <= 1e-9,
        "cubic root {gamma} disagrees with the consistency root {gamma_check}"
    );

    let point = MaxFamilyPoint::new(1, gamma).expect("the optimal gamma is feasible");
    let masses = max_family_masses(&point).expect("the optimal member is monotone");
    let probs = masses.to_probs();
    let cost = 1.0 / gamma;

    let check = analytic::expected_max(&masses).expect("the optimal masses are non-degenerate");
    assert!(
        (check - cost).abs() <= 1e-9,
        "evaluator {check} disagrees with 1/gamma {cost}"
    );

    let gamma_zero = solve_max_gamma(0).expect("the N = 0 consistency equation has a root");
    assert!(cost < 1.0 / gamma_zero, "the N = 0 member should cost more");

    let alpha = probs.probs()[0];
    let beta = probs.probs()[1];
    assert!(
        alpha_cubic().eval(alpha).abs() <= 1e-9,
        "first probability misses its cubic"
    );
    assert!(
        beta_cubic().eval(beta).abs() <= 1e-9,
        "second probability misses its cubic"
    );

    (probs, cost)
}

/// Sextic with the optimal N = 1 boundary coefficients among its roots:
/// `76x^6 - 532x^5 + 664x^4 + 3288x^3 + 4680x^2 + 2268x + 729`.
const COEFFICIENT_SEXTIC: [f64; 7] = [76.0, -532.0, 664.0, 3288.0, 4680.0, 2268.0, 729.0];

/// True iff both boundary coefficients `C1, C2` of the point satisfy the
/// sextic to a relative residual of 1e-6. Only the optimal `N = 1` member
/// does.
pub fn c_polynomial_check(pt: &MaxFamilyPoint) -> bool {
    [pt.c1, pt.c2].into_iter().all(|c| {
        let mut value = Complex64::new(0.0, 0.0);
        let mut scale = 0.0;
        for coefficient in COEFFICIENT_SEXTIC {
            value = value * c + coefficient;
            scale = scale * c.norm() + coefficient.abs();
        }
        value.norm() <= 1e-6 * scale
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{expected_avg, expected_max, markov_oracle};
    use crate::policy::Objective;

    const SQRT2: f64 = std::f64::consts::SQRT_2;
    const SQRT6: f64 = 2.449489742783178;

    #[test]
    fn cubic_roots_match_their_decimals() {
        let gamma = solve_cubic_in_bracket(&gamma_cubic(), 1e-12).unwrap();
        assert!((gamma - 0.299723).abs() < 5e-7, "gamma = {gamma}");
        let alpha = solve_cubic_in_bracket(&alpha_cubic(), 1e-12).unwrap();
        assert!((alpha - 0.528837).abs() < 5e-7, "alpha = {alpha}");
        let beta = solve_cubic_in_bracket(&beta_cubic(), 1e-12).unwrap();
        assert!((beta - 0.785997).abs() < 5e-7, "beta = {beta}");
    }

    #[test]
    fn roots_are_certified() {
        for spec in [gamma_cubic(), alpha_cubic(), beta_cubic()] {
            let root = solve_cubic_in_bracket(&spec, 1e-12).unwrap();
            assert!(spec.eval(root).abs() <= 1e-10 * spec.coefficient_scale());
            assert!(root > spec.bracket.0 && root < spec.bracket.1);
        }
    }

    #[test]
    fn missing_sign_change_is_reported() {
        let spec = CubicSpec::new([1.0, 0.0, 0.0, 1.0], (0.0, 1.0));
        assert!(matches!(
            solve_cubic_in_bracket(&spec, 1e-12),
            Err(ProtocolError::NoSignChange { .. })
        ));
    }

    proptest::proptest! {
        // Cubics built from three known separated roots: bracketing the
        // middle one must recover it.
        #[test]
        fn solver_recovers_constructed_roots(
            r1 in -2.0..-0.5f64,
            r2 in -0.2..0.6f64,
            r3 in 1.0..3.0f64,
            magnitude in 0.5..4.0f64,
            negate in proptest::prelude::any::<bool>(),
        ) {
            let lead = if negate { -magnitude } else { magnitude };
            let spec = CubicSpec::new(
                [
                    lead,
                    -lead * (r1 + r2 + r3),
                    lead * (r1 * r2 + r1 * r3 + r2 * r3),
                    -lead * (r1 * r2 * r3),
                ],
                (0.5 * (r1 + r2), 0.5 * (r2 + r3)),
            );
            let root = solve_cubic_in_bracket(&spec, 1e-10).unwrap();
            proptest::prop_assert!((root - r2).abs() < 1e-7, "found {root}, planted {r2}");
        }
    }

    #[test]
    fn avg_family_reproduces_the_optimal_masses() {
        let point = AvgFamilyPoint::new(2, 0.5 - 1.0 / SQRT6);
        let masses = avg_family_masses(&point).unwrap();
        let expected = [1.0, (SQRT6 - 1.0) / 3.0, (SQRT6 - 2.0) / 3.0, 0.0];
        for (got, want) in masses.masses().iter().zip(expected) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn avg_family_boundary_cases() {
        // a2 = 0 at N = 1 solves the boundary conditions with a0 = 1/2.
        let masses = avg_family_masses(&AvgFamilyPoint::new(1, 0.0)).unwrap();
        assert_eq!(masses.masses(), &[1.0, 0.5, 0.0]);
        let oracle = markov_oracle(&masses.to_probs(), Objective::Avg).unwrap();
        assert!((oracle - expected_avg(&masses).unwrap()).abs() < 1e-12);

        // Far outside the constraint interval the masses dip below zero.
        assert!(matches!(
            avg_family_masses(&AvgFamilyPoint::new(2, 1.0)),
            Err(ProtocolError::NonMonotone(_))
        ));

        // At the upper endpoint the quadratic touches zero one index early;
        // the duplicate zero is dropped.
        let endpoint = avg_family_masses(&AvgFamilyPoint::new(3, 1.0 / 12.0)).unwrap();
        let expected = [1.0, 0.5, 1.0 / 6.0, 0.0];
        assert_eq!(endpoint.masses().len(), 4);
        for (got, want) in endpoint.masses().iter().zip(expected) {
            assert!((got - want).abs() < 1e-12);
        }

        // At the lower endpoint the head mass duplicates the anchor.
        assert!(avg_family_masses(&AvgFamilyPoint::new(2, -1.0 / 6.0)).is_err());
    }

    #[test]
    fn avg_family_cost_examples() {
        let opt = avg_family_cost(2, 0.5 - 1.0 / SQRT6).unwrap();
        assert!((opt - (3.0 + SQRT6) / 2.0).abs() < 1e-12);
        let n3 = avg_family_cost(3, 1.0 / 12.0).unwrap();
        assert!((n3 - 30.0 / 11.0).abs() < 1e-12);
        let n5 = avg_family_cost(5, 1.0 / 30.0).unwrap();
        assert!((n5 - 105.0 / 34.0).abs() < 1e-12);
    }

    #[test]
    fn avg_family_cost_matches_the_evaluator_on_a_grid() {
        for n in 1..=6u32 {
            let (lo, hi) = AvgFamilyPoint::constraint_interval(n);
            for i in 0..50 {
                let a2 = lo + (hi - lo) * (i + 1) as f64 / 51.0;
                let formula = avg_family_cost(n, a2).unwrap();
                let masses = avg_family_masses(&AvgFamilyPoint::new(n, a2)).unwrap();
                let evaluated = expected_avg(&masses).unwrap();
                assert!(
                    (formula - evaluated).abs() < 1e-9,
                    "N = {n}, a2 = {a2}: formula {formula} vs evaluator {evaluated}"
                );
            }
        }
    }

    #[test]
    fn table_picks_the_grid_scan_optimum() {
        // Independent check of the per-N inner optimization: a dense scan of
        // the constraint interval must not find anything cheaper.
        for row in avg_table(6) {
            let (lo, hi) = AvgFamilyPoint::constraint_interval(row.n);
            let mut best = f64::INFINITY;
            for i in 0..4000 {
                let a2 = lo + (hi - lo) * (i as f64 + 0.5) / 4000.0;
                if let Ok(cost) = avg_family_cost(row.n, a2) {
                    best = best.min(cost);
                }
            }
            assert!(
                row.cost <= best + 1e-9,
                "N = {}: table {} vs grid scan {}",
                row.n,
                row.cost,
                best
            );
        }
    }

    #[test]
    fn table_rows_match_the_known_solutions() {
        let rows = avg_table(6);
        let expected_a2 = [
            1.5 - SQRT2,
            0.5 - 1.0 / SQRT6,
            1.0 / 12.0,
            1.0 / 20.0,
            1.0 / 30.0,
        ];
        let expected_cost = [
            SQRT2 + 1.5,
            (3.0 + SQRT6) / 2.0,
            30.0 / 11.0,
            20.0 / 7.0,
            105.0 / 34.0,
        ];
        for (row, (a2, cost)) in rows.iter().zip(expected_a2.iter().zip(expected_cost)) {
            assert!((row.a2 - a2).abs() < 1e-9, "N = {}: a2 = {}", row.n, row.a2);
            assert!(
                (row.cost - cost).abs() < 1e-6,
                "N = {}: cost = {}",
                row.n,
                row.cost
            );
        }
        // Beyond N = 5 the endpoint cost grows with N.
        assert!(rows[5].cost > rows[4].cost);
        // N = 2 is the global choice.
        let best = rows
            .iter()
            .min_by(|a, b| a.cost.total_cmp(&b.cost))
            .unwrap();
        assert_eq!(best.n, 2);
    }

    #[test]
    fn optimal_avg_protocol_constants() {
        let (probs, cost) = optimal_avg_protocol();
        let p = probs.probs();
        assert!((p[0] - (4.0 - SQRT6) / 3.0).abs() < 1e-12);
        assert!((p[1] - (1.0 + SQRT6) / 5.0).abs() < 1e-12);
        assert_eq!(p[2], 1.0);
        assert!((cost - (3.0 + SQRT6) / 2.0).abs() < 1e-12);
        let oracle = markov_oracle(&probs, Objective::Avg).unwrap();
        assert!((oracle - cost).abs() < 1e-9);
    }

    #[test]
    fn optimal_min_protocol_constants() {
        let (p, cost) = optimal_min_protocol();
        assert_eq!((p, cost), (0.5, 2.0));
        let oracle = crate::analytic::markov_oracle_constant(p, Objective::Min).unwrap();
        assert!((oracle - cost).abs() < 1e-12);
    }

    #[test]
    fn max_family_at_the_optimum() {
        let gamma = solve_cubic_in_bracket(&gamma_cubic(), 1e-12).unwrap();
        let point = MaxFamilyPoint::new(1, gamma).unwrap();
        let masses = max_family_masses(&point).unwrap();
        assert_eq!(masses.masses().len(), 4);
        // m_0 = 1 - alpha and the consistency equation pins m_1 = 1 - 3 gamma.
        assert!((masses.masses()[1] - 0.471163).abs() < 5e-7);
        assert!((masses.masses()[2] - (1.0 - 3.0 * gamma)).abs() < 1e-12);
        let probs = masses.to_probs();
        assert!((probs.probs()[0] - 0.528837).abs() < 5e-7);
        assert!((probs.probs()[1] - 0.785997).abs() < 5e-7);
        assert_eq!(probs.probs()[2], 1.0);
    }

    #[test]
    fn max_family_n0_member() {
        let gamma = (2.0 - SQRT2) / 2.0;
        let point = MaxFamilyPoint::new(0, gamma).unwrap();
        let masses = max_family_masses(&point).unwrap();
        assert_eq!(masses.masses().len(), 3);
        assert!((masses.masses()[1] - (SQRT2 - 1.0)).abs() < 1e-12);
        let residual = max_consistency_residual(0, gamma).unwrap();
        assert!(residual.abs() < 1e-9);
        // Its makespan cost is 2 + sqrt 2.
        let cost = expected_max(&masses).unwrap();
        assert!((cost - (2.0 + SQRT2)).abs() < 1e-9);
    }

    #[test]
    fn consistency_residual_brackets_the_root() {
        let gamma = solve_cubic_in_bracket(&gamma_cubic(), 1e-12).unwrap();
        assert!(max_consistency_residual(1, gamma).unwrap().abs() < 1e-9);
        let below = max_consistency_residual(1, 0.28).unwrap();
        let above = max_consistency_residual(1, 0.32).unwrap();
        assert!(below < 0.0 && above > 0.0);
        // Away from the root the residual is decisively nonzero.
        assert!(max_consistency_residual(1, 0.26).unwrap().abs() > 0.01);
    }

    #[test]
    fn infeasible_members_are_rejected() {
        assert!(matches!(
            MaxFamilyPoint::new(1, 0.2),
            Err(ProtocolError::GammaOutOfInterval(_))
        ));
        // Large N pushes the conjugate phase past a half turn and the masses
        // stop decreasing.
        let point = MaxFamilyPoint::new(5, 0.33).unwrap();
        assert!(matches!(
            max_family_masses(&point),
            Err(ProtocolError::NonMonotone(_))
        ));
    }

    #[test]
    fn consistency_equation_has_no_root_beyond_n1() {
        // Only N = 0 and N = 1 admit optimal family members; for N = 2 the
        // search fails (infeasible masses near the lower end of the interval,
        // no sign change elsewhere).
        assert!(solve_max_gamma(2).is_err());
    }

    #[test]
    fn optimal_max_protocol_constants() {
        let (probs, cost) = optimal_max_protocol();
        let p = probs.probs();
        assert!((p[0] - 0.528837).abs() < 5e-7);
        assert!((p[1] - 0.785997).abs() < 5e-7);
        assert_eq!(p[2], 1.0);
        assert!((cost - 3.33641).abs() < 5e-6);
        assert!((cost - 3.336_411_850_500_474).abs() < 1e-12);
        // Dominance: beats the constant-half policy, cannot beat the first-
        // success bound plus one.
        assert!((3.0..4.0).contains(&cost));
        let masses = probs.to_masses();
        let evaluated = expected_max(&masses).unwrap();
        assert!((evaluated - cost).abs() < 1e-9);
    }

    #[test]
    fn coefficient_sextic_identifies_the_optimum() {
        let gamma = solve_cubic_in_bracket(&gamma_cubic(), 1e-12).unwrap();
        let optimal = MaxFamilyPoint::new(1, gamma).unwrap();
        assert!(c_polynomial_check(&optimal));
        // The paper-reported coefficient value, as a spot check.
        assert!((optimal.c1().re - -0.264419).abs() < 5e-7);
        assert!((optimal.c1().im.abs() - 0.426908).abs() < 5e-7);

        let n0 = MaxFamilyPoint::new(0, (2.0 - SQRT2) / 2.0).unwrap();
        assert!(!c_polynomial_check(&n0));

        let perturbed = MaxFamilyPoint::new(1, gamma + 1e-3).unwrap();
        assert!(!c_polynomial_check(&perturbed));
    }

    #[test]
    fn stationarity_at_both_optima() {
        // Average objective: 2 m_k - m_{k-1} - m_{k+1} is the constant
        // -1/(2 E) at every interior index.
        let (probs, cost) = optimal_avg_protocol();
        let m = probs.to_masses();
        let values = m.masses();
        let constant = -1.0 / (2.0 * cost);
        for k in 1..values.len() - 1 {
            let residual = 2.0 * values[k] - values[k - 1] - values[k + 1] - constant;
            assert!(residual.abs() < 1e-9, "index {k}: residual {residual}");
        }

        // Makespan objective: m_{v+1} = (2 - gamma) m_v - m_{v-1} + gamma.
        let (probs, cost) = optimal_max_protocol();
        let gamma = 1.0 / cost;
        let m = probs.to_masses();
        let values = m.masses();
        for v in 1..values.len() - 1 {
            let residual = values[v + 1] - ((2.0 - gamma) * values[v] - values[v - 1] + gamma);
            assert!(residual.abs() < 1e-9, "index {v}: residual {residual}");
        }
    }
}
