//! Lagrange-polynomial machinery shared by the sharing, query, server-noise
//! and recovery steps.
//!
//! Polynomials are kept in node/value form and evaluated on demand through
//! Lagrange basis weights; nothing in the protocol needs coefficients.
//! Interpolation is quadratic in the number of nodes.

use serde::{Deserialize, Serialize};

use crate::field::{axpy, FieldElement, PrimeField};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PolyError {
    #[error("interpolation nodes are not pairwise distinct (node {0})")]
    DuplicateNode(u64),
    #[error("expected {expected} {what}, got {got}")]
    Count {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("response from client {responder} does not lie on the interpolated response polynomial")]
    InconsistentResponses { responder: usize },
    #[error("vector length mismatch: expected {expected}, got {got}")]
    Length { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParamError {
    #[error("need at least 3 clients, got N={0}")]
    TooFewClients(usize),
    #[error("collusion threshold must be at least 1")]
    ZeroThreshold,
    #[error(
        "threshold T={t} violates T < N/2 for N={n}: the partition count K = floor((N+1)/2) - T \
         would be {k}; the protocol is only T-private for T < N/2"
    )]
    ThresholdTooLarge { n: usize, t: usize, k: i64 },
    #[error("evaluation points must be {expected} pairwise distinct field elements")]
    Points { expected: usize },
    #[error("field modulus {p} too small for {needed} distinct evaluation points")]
    FieldTooSmall { p: u64, needed: usize },
}

/// Partition count `K = floor((N+1)/2) - T`.
pub fn partition_count(n: usize, t: usize) -> i64 {
    ((n + 1) / 2) as i64 - t as i64
}

/// The public `b_1..b_{K+T}` and `x_1..x_N` points.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvaluationPoints {
    block_points: Vec<FieldElement>,
    client_points: Vec<FieldElement>,
}

impl EvaluationPoints {
    pub fn new(block_points: Vec<FieldElement>, client_points: Vec<FieldElement>) -> Result<Self, ParamError> {
        let expected = block_points.len() + client_points.len();
        let mut all: Vec<u64> = block_points.iter().chain(&client_points).map(|x| x.value()).collect();
        all.sort_unstable();
        all.dedup();
        if all.len() != expected {
            return Err(ParamError::Points { expected });
        }
        Ok(Self { block_points, client_points })
    }

    /// `b_k = k` and `x_n = K + T + n`, both 1-indexed.
    pub fn standard(field: PrimeField, k: usize, t: usize, n: usize) -> Result<Self, ParamError> {
        let needed = k + t + n;
        if (needed as u64) >= field.modulus() {
            return Err(ParamError::FieldTooSmall {
                p: field.modulus(),
                needed,
            });
        }
        let block_points = (1..=k + t).map(|i| field.elem(i as u64)).collect();
        let client_points = (1..=n).map(|i| field.elem((k + t + i) as u64)).collect();
        Self::new(block_points, client_points)
    }

    pub fn block_points(&self) -> &[FieldElement] {
        &self.block_points
    }

    pub fn client_points(&self) -> &[FieldElement] {
        &self.client_points
    }
}

/// Public parameters of one deployment once the entity count is known.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolParams {
    pub n: usize,
    pub t: usize,
    pub k: usize,
    pub m: usize,
    pub d: usize,
    pub block_len: usize,
    pub field: PrimeField,
    pub points: EvaluationPoints,
}

/// Serializable summary of [`ProtocolParams`] for reports.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ParamSummary {
    pub n: usize,
    pub t: usize,
    pub k: usize,
    pub m: usize,
    pub d: usize,
    pub block_len: usize,
    pub modulus: u64,
}

/// Checks `T >= 1`, `N >= 3` and `T < N/2`, returning `K`.
pub fn check_threshold(n: usize, t: usize) -> Result<usize, ParamError> {
    if n < 3 {
        return Err(ParamError::TooFewClients(n));
    }
    if t == 0 {
        return Err(ParamError::ZeroThreshold);
    }
    let k = partition_count(n, t);
    if k < 1 || 2 * t >= n {
        return Err(ParamError::ThresholdTooLarge { n, t, k });
    }
    let k = k as usize;
    debug_assert!(2 * (k + t - 1) < n);
    Ok(k)
}

impl ProtocolParams {
    pub fn new(field: PrimeField, n: usize, t: usize, m: usize, d: usize) -> Result<Self, ParamError> {
        let k = check_threshold(n, t)?;
        let points = EvaluationPoints::standard(field, k, t, n)?;
        Self::with_points(field, n, t, m, d, points)
    }

    pub fn with_points(
        field: PrimeField,
        n: usize,
        t: usize,
        m: usize,
        d: usize,
        points: EvaluationPoints,
    ) -> Result<Self, ParamError> {
        let k = check_threshold(n, t)?;
        if points.block_points.len() != k + t || points.client_points.len() != n {
            return Err(ParamError::Points { expected: k + t + n });
        }
        Ok(Self {
            n,
            t,
            k,
            m,
            d,
            block_len: (d + 1).div_ceil(k),
            field,
            points,
        })
    }

    /// Number of server noise values, `K + 2T - 1`.
    pub fn k_tilde(&self) -> usize {
        self.k + 2 * self.t - 1
    }

    pub fn share_degree(&self) -> usize {
        self.k + self.t - 1
    }

    pub fn response_degree(&self) -> usize {
        2 * (self.k + self.t - 1)
    }

    /// Length of an expanded embedding after padding, `K * block_len`.
    pub fn padded_len(&self) -> usize {
        self.k * self.block_len
    }

    pub fn client_point(&self, client: usize) -> FieldElement {
        self.points.client_points[client]
    }

    pub fn summary(&self) -> ParamSummary {
        ParamSummary {
            n: self.n,
            t: self.t,
            k: self.k,
            m: self.m,
            d: self.d,
            block_len: self.block_len,
            modulus: self.field.modulus(),
        }
    }
}

/// Weights `w_i` with `f(x) = sum_i w_i f(x_i)` for every polynomial `f` of
/// degree below `nodes.len()`.
pub fn lagrange_weights(nodes: &[FieldElement], x: FieldElement) -> Result<Vec<FieldElement>, PolyError> {
    for (i, a) in nodes.iter().enumerate() {
        if nodes[..i].contains(a) {
            return Err(PolyError::DuplicateNode(a.value()));
        }
    }
    let weights = nodes
        .iter()
        .enumerate()
        .map(|(i, &xi)| {
            let mut num = x.one_of();
            let mut den = x.one_of();
            for (j, &xj) in nodes.iter().enumerate() {
                if i != j {
                    num *= x - xj;
                    den *= xi - xj;
                }
            }
            num * den.inv().expect("distinct nodes")
        })
        .collect();
    Ok(weights)
}

/// Evaluates the unique interpolant through `nodes` at `x`, coordinatewise.
pub fn lagrange_eval(
    nodes: &[(FieldElement, Vec<FieldElement>)],
    x: FieldElement,
) -> Result<Vec<FieldElement>, PolyError> {
    let xs: Vec<_> = nodes.iter().map(|(a, _)| *a).collect();
    let weights = lagrange_weights(&xs, x)?;
    let len = nodes.first().map_or(0, |(_, v)| v.len());
    combine(&weights, nodes.iter().map(|(_, v)| v.as_slice()), len)
}

fn combine<'a>(
    weights: &[FieldElement],
    values: impl Iterator<Item = &'a [FieldElement]>,
    len: usize,
) -> Result<Vec<FieldElement>, PolyError> {
    let Some(first) = weights.first() else {
        return Ok(Vec::new());
    };
    let mut out = vec![first.zero_of(); len];
    for (&w, v) in weights.iter().zip(values) {
        if v.len() != len {
            return Err(PolyError::Length {
                expected: len,
                got: v.len(),
            });
        }
        axpy(&mut out, w, v);
    }
    Ok(out)
}

/// Coefficients (lowest degree first) of the interpolant through `(x_i, y_i)`.
pub fn interpolate_coefficients(
    xs: &[FieldElement],
    ys: &[FieldElement],
) -> Result<Vec<FieldElement>, PolyError> {
    if xs.len() != ys.len() {
        return Err(PolyError::Length {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    let Some(&first) = xs.first() else {
        return Ok(Vec::new());
    };
    let zero = first.zero_of();
    let one = first.one_of();
    let n = xs.len();
    let mut coeffs = vec![zero; n];
    for i in 0..n {
        // basis numerator prod_{j != i} (X - x_j)
        let mut basis = vec![one];
        let mut den = one;
        for j in 0..n {
            if i == j {
                continue;
            }
            if xs[i] == xs[j] {
                return Err(PolyError::DuplicateNode(xs[i].value()));
            }
            let mut next = vec![zero; basis.len() + 1];
            for (deg, &c) in basis.iter().enumerate() {
                next[deg + 1] += c;
                next[deg] -= c * xs[j];
            }
            basis = next;
            den *= xs[i] - xs[j];
        }
        let scale = ys[i] * den.inv().expect("distinct nodes");
        for (c, b) in coeffs.iter_mut().zip(&basis) {
            *c += scale * *b;
        }
    }
    Ok(coeffs)
}

/// Degree of a coefficient vector; the zero polynomial reports 0.
pub fn degree(coeffs: &[FieldElement]) -> usize {
    coeffs.iter().rposition(|c| !c.is_zero()).unwrap_or(0)
}

/// Share polynomial of one (client, entity): data blocks at
/// `b_1..b_K`, noise at `b_{K+1}..b_{K+T}`.
#[derive(Debug, Clone)]
pub struct SharePoly {
    nodes: Vec<(FieldElement, Vec<FieldElement>)>,
}

impl SharePoly {
    pub fn new(
        params: &ProtocolParams,
        blocks: &[Vec<FieldElement>],
        noise: &[Vec<FieldElement>],
    ) -> Result<Self, PolyError> {
        check_count("data blocks", params.k, blocks.len())?;
        check_count("noise blocks", params.t, noise.len())?;
        for b in blocks.iter().chain(noise) {
            if b.len() != params.block_len {
                return Err(PolyError::Length {
                    expected: params.block_len,
                    got: b.len(),
                });
            }
        }
        let nodes = params
            .points
            .block_points()
            .iter()
            .copied()
            .zip(blocks.iter().chain(noise).cloned())
            .collect();
        Ok(Self { nodes })
    }

    pub fn eval(&self, x: FieldElement) -> Vec<FieldElement> {
        lagrange_eval(&self.nodes, x).expect("validated nodes")
    }

    /// Evaluation with weights from `share_weights` for the same point.
    pub fn eval_with(&self, weights: &[FieldElement]) -> Vec<FieldElement> {
        let len = self.nodes[0].1.len();
        combine(weights, self.nodes.iter().map(|(_, v)| v.as_slice()), len).expect("validated nodes")
    }
}

fn check_count(what: &'static str, expected: usize, got: usize) -> Result<(), PolyError> {
    if expected != got {
        return Err(PolyError::Count { what, expected, got });
    }
    Ok(())
}

/// `phi(x)` for the share polynomial through `blocks` and `noise`.
pub fn share_encode(
    blocks: &[Vec<FieldElement>],
    noise: &[Vec<FieldElement>],
    params: &ProtocolParams,
    x: FieldElement,
) -> Result<Vec<FieldElement>, PolyError> {
    Ok(SharePoly::new(params, blocks, noise)?.eval(x))
}

/// Weights of the share polynomial's `K + T` defining values at `x`.
pub fn share_weights(params: &ProtocolParams, x: FieldElement) -> Vec<FieldElement> {
    lagrange_weights(params.points.block_points(), x).expect("distinct public points")
}

/// Query coordinates at `x` retrieving entity `target` out of `M`.
///
/// `noise[m]` holds the `T` random values of the query polynomial for
/// entity `m`.
pub fn query_encode(
    target: usize,
    noise: &[Vec<FieldElement>],
    params: &ProtocolParams,
    x: FieldElement,
) -> Result<Vec<FieldElement>, PolyError> {
    check_count("query noise rows", params.m, noise.len())?;
    if target >= params.m {
        return Err(PolyError::Count {
            what: "target below entity count",
            expected: params.m,
            got: target,
        });
    }
    let w = share_weights(params, x);
    let (data_w, noise_w) = w.split_at(params.k);
    let selector: FieldElement = data_w.iter().fold(params.field.zero(), |acc, &c| acc + c);
    noise
        .iter()
        .enumerate()
        .map(|(m, z)| {
            check_count("query noise values", params.t, z.len())?;
            let mut acc = if m == target { selector } else { params.field.zero() };
            for (&c, &zj) in noise_w.iter().zip(z) {
                acc += c * zj;
            }
            Ok(acc)
        })
        .collect()
}

/// A responder's answer: the query-weighted sum of its aggregated share blocks.
pub fn answer_query(query: &[FieldElement], aggregate: &[Vec<FieldElement>], params: &ProtocolParams) -> Vec<FieldElement> {
    let mut a = params.field.zeros(params.block_len);
    for (&qm, ym) in query.iter().zip(aggregate) {
        crate::field::axpy(&mut a, qm, ym);
    }
    a
}

/// Nodes of the server noise polynomial: zero at `b_1..b_K` and the
/// given noise at `x_1..x_{K+2T-1}`.
fn noise_nodes(params: &ProtocolParams) -> Vec<FieldElement> {
    params
        .points
        .block_points()
        .iter()
        .take(params.k)
        .chain(params.points.client_points().iter().take(params.k_tilde()))
        .copied()
        .collect()
}

/// Evaluations `noise(x_v)` for every client `v`.
pub fn noise_poly_evals(
    noise: &[Vec<FieldElement>],
    params: &ProtocolParams,
) -> Result<Vec<Vec<FieldElement>>, PolyError> {
    check_count("server noise vectors", params.k_tilde(), noise.len())?;
    let nodes = noise_nodes(params);
    let zeros = params.field.zeros(params.block_len);
    let values: Vec<&[FieldElement]> = std::iter::repeat_n(zeros.as_slice(), params.k)
        .chain(noise.iter().map(Vec::as_slice))
        .collect();
    params
        .points
        .client_points()
        .iter()
        .map(|&a| {
            let w = lagrange_weights(&nodes, a)?;
            combine(&w, values.iter().copied(), params.block_len)
        })
        .collect()
}

/// Weights of `noise(x_v)` with respect to the `K + 2T - 1` noise values.
pub fn noise_propagation_weights(params: &ProtocolParams, v: usize) -> Vec<FieldElement> {
    let w = lagrange_weights(&noise_nodes(params), params.client_point(v)).expect("distinct public points");
    w[params.k..].to_vec()
}

/// Weights applied to the first `2(K+T-1)+1` responses to evaluate the
/// response polynomial at `b_{k}`.
pub fn recovery_weights(params: &ProtocolParams, k: usize) -> Vec<FieldElement> {
    let used = params.response_degree() + 1;
    lagrange_weights(&params.points.client_points()[..used], params.points.block_points()[k])
        .expect("distinct public points")
}

/// Interpolates the response polynomial from the `N` responses and returns
/// its values at `b_1..b_K`. Surplus responses are checked against the
/// interpolant.
pub fn reconstruct_recover(
    responses: &[Vec<FieldElement>],
    params: &ProtocolParams,
) -> Result<Vec<Vec<FieldElement>>, PolyError> {
    check_count("responses", params.n, responses.len())?;
    let used = params.response_degree() + 1;
    let nodes: Vec<(FieldElement, Vec<FieldElement>)> = params
        .points
        .client_points()
        .iter()
        .copied()
        .zip(responses.iter().cloned())
        .take(used)
        .collect();
    for (v, extra) in responses.iter().enumerate().skip(used) {
        if lagrange_eval(&nodes, params.client_point(v))? != *extra {
            return Err(PolyError::InconsistentResponses { responder: v + 1 });
        }
    }
    params.points.block_points()[..params.k]
        .iter()
        .map(|&b| lagrange_eval(&nodes, b))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use std::collections::HashMap;

    fn field(p: u64) -> PrimeField {
        PrimeField::new(p).unwrap()
    }

    /// N=3, T=K=1, block points (1, 2), client points (3, 4, 5).
    fn example_params(p: u64, m: usize, d: usize) -> ProtocolParams {
        let params = ProtocolParams::new(field(p), 3, 1, m, d).unwrap();
        assert_eq!(params.k, 1);
        params
    }

    fn signed(v: &[FieldElement]) -> Vec<i128> {
        v.iter().map(|x| x.to_signed()).collect()
    }

    fn rand_vec(f: PrimeField, len: usize, rng: &mut impl Rng) -> Vec<FieldElement> {
        (0..len).map(|_| f.elem(rng.gen())).collect()
    }

    #[test]
    fn standard_points_match_worked_example() {
        let params = example_params(10007, 2, 1);
        let b: Vec<u64> = params.points.block_points().iter().map(|x| x.value()).collect();
        let a: Vec<u64> = params.points.client_points().iter().map(|x| x.value()).collect();
        assert_eq!(b, vec![1, 2]);
        assert_eq!(a, vec![3, 4, 5]);
        assert_eq!(params.k_tilde(), 2);
    }

    #[test]
    fn lagrange_examples() {
        let f = field(10007);
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let h = rand_vec(f, 3, &mut rng);
        let z = rand_vec(f, 3, &mut rng);
        let nodes = vec![(f.elem(1), h.clone()), (f.elem(2), z.clone())];
        let expect: Vec<_> = h.iter().zip(&z).map(|(&h, &z)| -h + f.elem(2) * z).collect();
        assert_eq!(lagrange_eval(&nodes, f.elem(3)).unwrap(), expect);
        assert_eq!(lagrange_eval(&nodes, f.elem(1)).unwrap(), h);

        let s1 = f.elem(rng.gen());
        let s2 = f.elem(rng.gen());
        let nodes = vec![
            (f.elem(1), vec![f.zero()]),
            (f.elem(3), vec![f.elem(3) * s1]),
            (f.elem(4), vec![f.elem(3) * s2]),
        ];
        let expect = f.from_i64(-6) * s1 + f.elem(8) * s2;
        assert_eq!(lagrange_eval(&nodes, f.elem(5)).unwrap(), vec![expect]);

        let dup = vec![(f.elem(1), vec![f.one()]), (f.elem(1), vec![f.zero()])];
        assert_eq!(lagrange_eval(&dup, f.elem(2)), Err(PolyError::DuplicateNode(1)));
    }

    #[test]
    fn share_encode_examples() {
        let params = example_params(10007, 2, 1);
        let f = params.field;
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let h = rand_vec(f, params.block_len, &mut rng);
        let z = rand_vec(f, params.block_len, &mut rng);
        let blocks = vec![h.clone()];
        let noise = vec![z.clone()];
        for (x, (ch, cz)) in [(3u64, (-1i64, 2i64)), (4, (-2, 3)), (5, (-3, 4))] {
            let got = share_encode(&blocks, &noise, &params, f.elem(x)).unwrap();
            let want: Vec<_> = h
                .iter()
                .zip(&z)
                .map(|(&h, &z)| f.from_i64(ch) * h + f.from_i64(cz) * z)
                .collect();
            assert_eq!(got, want, "x={x}");
            assert_eq!(signed(&share_weights(&params, f.elem(x))), vec![ch as i128, cz as i128]);
        }
        assert_eq!(share_encode(&blocks, &noise, &params, f.elem(1)).unwrap(), h);
        assert!(matches!(
            share_encode(&[], &noise, &params, f.elem(3)),
            Err(PolyError::Count { .. })
        ));
    }

    #[test]
    fn query_encode_examples() {
        let params = example_params(10007, 2, 1);
        let f = params.field;
        let (z1, z2) = (f.elem(1234), f.elem(777));
        let noise = vec![vec![z1], vec![z2]];
        let q3 = query_encode(0, &noise, &params, f.elem(3)).unwrap();
        assert_eq!(q3, vec![f.from_i64(-1) + f.elem(2) * z1, f.elem(2) * z2]);
        let q5 = query_encode(0, &noise, &params, f.elem(5)).unwrap();
        assert_eq!(q5, vec![f.from_i64(-3) + f.elem(4) * z1, f.elem(4) * z2]);
        let at_beta = query_encode(0, &noise, &params, f.elem(1)).unwrap();
        assert_eq!(at_beta, vec![f.one(), f.zero()]);
    }

    #[test]
    fn noise_poly_examples() {
        let params = example_params(10007, 2, 0);
        let f = params.field;
        let (s1, s2) = (f.elem(41), f.elem(9000));
        let three = f.elem(3);
        let evals = noise_poly_evals(&[vec![three * s1], vec![three * s2]], &params).unwrap();
        assert_eq!(evals[0], vec![three * s1]);
        assert_eq!(evals[1], vec![three * s2]);
        assert_eq!(evals[2], vec![f.from_i64(-6) * s1 + f.elem(8) * s2]);
        let w: Vec<_> = noise_propagation_weights(&params, 2).into_iter().map(|w| w * three).collect();
        assert_eq!(signed(&w), vec![-6, 8]);

        let zero = noise_poly_evals(&[f.zeros(1), f.zeros(1)], &params).unwrap();
        assert!(zero.iter().flatten().all(|x| x.is_zero()));

        // the interpolant vanishes at b_1
        let nodes: Vec<_> = params.points.client_points().iter().copied().zip(evals).collect();
        assert_eq!(lagrange_eval(&nodes, f.elem(1)).unwrap(), vec![f.zero()]);
    }

    #[test]
    fn recovery_examples() {
        let params = example_params(10007, 2, 1);
        let f = params.field;
        assert_eq!(signed(&recovery_weights(&params, 0)), vec![6, -8, 3]);
        let c = vec![f.elem(99), f.elem(5)];
        let got = reconstruct_recover(&vec![c.clone(); 3], &params).unwrap();
        assert_eq!(got, vec![c]);
    }

    #[test]
    fn recovery_of_random_polynomials() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for (n, t) in [(3, 1), (5, 1), (5, 2), (6, 2), (7, 3), (9, 2)] {
            let f = PrimeField::smallest_above(1 << 40).unwrap();
            let params = ProtocolParams::new(f, n, t, 1, 5).unwrap();
            // direct evaluation of a random degree-2(K+T-1) polynomial
            let coeffs = rand_vec(f, params.response_degree() + 1, &mut rng);
            let eval = |x: FieldElement| coeffs.iter().rev().fold(f.zero(), |acc, &c| acc * x + c);
            let responses: Vec<_> = params.points.client_points().iter().map(|&a| vec![eval(a)]).collect();
            let got = reconstruct_recover(&responses, &params).unwrap();
            let want: Vec<_> = params.points.block_points()[..params.k].iter().map(|&b| vec![eval(b)]).collect();
            assert_eq!(got, want, "n={n} t={t}");
        }
    }

    #[test]
    fn surplus_response_is_checked() {
        let f = PrimeField::smallest_above(1 << 40).unwrap();
        let params = ProtocolParams::new(f, 6, 2, 1, 0).unwrap();
        assert_eq!(params.response_degree() + 1, 5);
        let mut responses: Vec<_> = (0..6).map(|_| vec![f.elem(7)]).collect();
        assert!(reconstruct_recover(&responses, &params).is_ok());
        responses[5][0] = f.elem(8);
        assert_eq!(
            reconstruct_recover(&responses, &params),
            Err(PolyError::InconsistentResponses { responder: 6 })
        );
    }

    #[test]
    fn parameter_law() {
        for n in 3..=20 {
            for t in 1..n {
                let res = check_threshold(n, t);
                if 2 * t < n {
                    let k = res.unwrap();
                    assert_eq!(k as i64, ((n + 1) / 2) as i64 - t as i64);
                    assert!(2 * (k + t - 1) < n);
                } else {
                    assert!(matches!(res, Err(ParamError::ThresholdTooLarge { .. })));
                }
            }
        }
        assert_eq!(check_threshold(1, 1), Err(ParamError::TooFewClients(1)));
        assert_eq!(check_threshold(3, 0), Err(ParamError::ZeroThreshold));
    }

    #[test]
    fn degree_audit() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let f = PrimeField::smallest_above(1 << 30).unwrap();
        for (n, t) in [(3, 1), (5, 2), (8, 3), (9, 1)] {
            let params = ProtocolParams::new(f, n, t, 3, 4).unwrap();
            let client_points = params.points.client_points();
            let blocks: Vec<_> = (0..params.k).map(|_| rand_vec(f, params.block_len, &mut rng)).collect();
            let noise: Vec<_> = (0..t).map(|_| rand_vec(f, params.block_len, &mut rng)).collect();
            let shares: Vec<_> = client_points.iter().map(|&a| share_encode(&blocks, &noise, &params, a).unwrap()).collect();
            let qnoise: Vec<_> = (0..3).map(|_| rand_vec(f, t, &mut rng)).collect();
            let queries: Vec<_> = client_points.iter().map(|&a| query_encode(1, &qnoise, &params, a).unwrap()).collect();
            let snoise: Vec<_> = (0..params.k_tilde()).map(|_| rand_vec(f, params.block_len, &mut rng)).collect();
            let noise_at = noise_poly_evals(&snoise, &params).unwrap();
            for c in 0..params.block_len {
                let ys: Vec<_> = shares.iter().map(|s| s[c]).collect();
                assert!(degree(&interpolate_coefficients(client_points, &ys).unwrap()) <= params.share_degree());
                let ys: Vec<_> = noise_at.iter().map(|s| s[c]).collect();
                assert!(degree(&interpolate_coefficients(client_points, &ys).unwrap()) <= params.response_degree());
            }
            for m in 0..3 {
                let ys: Vec<_> = queries.iter().map(|q| q[m]).collect();
                assert!(degree(&interpolate_coefficients(client_points, &ys).unwrap()) <= params.share_degree());
            }
        }
    }

    #[test]
    fn aggregate_selection_identity() {
        // sum_m q^m(b_k) * sum_v f_{v,m}(b_k) equals sum_v h_{v,target}^k
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let f = PrimeField::smallest_above(1 << 30).unwrap();
        let params = ProtocolParams::new(f, 7, 2, 4, 5).unwrap();
        let target = 2;
        let data: Vec<Vec<Vec<Vec<FieldElement>>>> = (0..params.n)
            .map(|_| (0..params.m).map(|_| (0..params.k).map(|_| rand_vec(f, params.block_len, &mut rng)).collect()).collect())
            .collect();
        let polys: Vec<Vec<SharePoly>> = data
            .iter()
            .map(|per_m| {
                per_m
                    .iter()
                    .map(|blocks| {
                        let noise: Vec<_> = (0..params.t).map(|_| rand_vec(f, params.block_len, &mut rng)).collect();
                        SharePoly::new(&params, blocks, &noise).unwrap()
                    })
                    .collect()
            })
            .collect();
        let qnoise: Vec<_> = (0..params.m).map(|_| rand_vec(f, params.t, &mut rng)).collect();
        for k in 0..params.k {
            let block_point = params.points.block_points()[k];
            let q = query_encode(target, &qnoise, &params, block_point).unwrap();
            let mut lhs = f.zeros(params.block_len);
            for m in 0..params.m {
                for poly in polys.iter().map(|p| &p[m]) {
                    axpy(&mut lhs, q[m], &poly.eval(block_point));
                }
            }
            let mut rhs = f.zeros(params.block_len);
            for client in &data {
                axpy(&mut rhs, f.one(), &client[target][k]);
            }
            assert_eq!(lhs, rhs);
        }
    }

    /// Counts the joint distribution of the evaluations at `subset` over
    /// every noise draw; block_len = 1.
    fn share_distribution(
        params: &ProtocolParams,
        secret: FieldElement,
        subset: &[usize],
    ) -> HashMap<Vec<u64>, usize> {
        let f = params.field;
        let p = f.modulus();
        let mut counts = HashMap::new();
        let draws = p.pow(params.t as u32);
        for code in 0..draws {
            let noise: Vec<_> = (0..params.t).map(|j| vec![f.elem(code / p.pow(j as u32) % p)]).collect();
            let mut blocks = vec![vec![f.zero()]; params.k];
            blocks[0][0] = secret;
            let poly = SharePoly::new(params, &blocks, &noise).unwrap();
            let view: Vec<u64> = subset.iter().map(|&v| poly.eval(params.client_point(v))[0].value()).collect();
            *counts.entry(view).or_insert(0) += 1;
        }
        counts
    }

    #[test]
    fn any_t_shares_are_uniform() {
        let f = field(17);
        for (n, t) in [(3, 1), (5, 2)] {
            let params = ProtocolParams::new(f, n, t, 1, 0).unwrap();
            assert_eq!(params.block_len, 1);
            let subsets: Vec<Vec<usize>> = if t == 1 {
                (0..n).map(|v| vec![v]).collect()
            } else {
                (0..n).flat_map(|a| (a + 1..n).map(move |b| vec![a, b])).collect()
            };
            for subset in subsets {
                for s in [0, 1, 16] {
                    let counts = share_distribution(&params, f.elem(s), &subset);
                    assert_eq!(counts.len(), 17usize.pow(t as u32));
                    assert!(counts.values().all(|&c| c == 1));
                }
            }
        }
    }

    #[test]
    fn queries_for_different_targets_look_alike() {
        let f = field(17);
        let params = ProtocolParams::new(f, 3, 1, 2, 0).unwrap();
        for v in 0..3 {
            let dist = |target: usize| {
                let mut counts = HashMap::new();
                for a in 0..17 {
                    for b in 0..17 {
                        let noise = vec![vec![f.elem(a)], vec![f.elem(b)]];
                        let q = query_encode(target, &noise, &params, params.client_point(v)).unwrap();
                        *counts.entry((q[0].value(), q[1].value())).or_insert(0) += 1;
                    }
                }
                counts
            };
            assert_eq!(dist(0), dist(1));
        }
    }
}
