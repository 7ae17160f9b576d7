//! Kronecker-factorized message passing.
//!
//! Spatiotemporal attention over `P·N` nodes is approximated by `Θ_T ⊗ Θ_S`.
//! Features are indexed `p·N + n`. Instead of materialising the Kronecker
//! product, the factors are applied one mode at a time with batched matmuls,
//! and the operand is rearranged ("tumbled") between factors.
//!
//! For a chain of factors `Θ_1 … Θ_Δ` with sizes `I_1 … I_Δ` and a feature
//! mode `I_0`, an operand at depth `d` has shape
//! `[H, ∏_{α<d} I_α · ∏_{d<β≤Δ+1} I_β, I_d]` with `I_{Δ+1} = 1`, and its row
//! mode enumerates `(i_0 … i_{d−1}, i_{d+1} … i_{Δ+1})` in row-major order.

use crate::error::{Result, WeaverError};
use crate::ops_trait::TensorOps;
use crate::scalar::Scalar;
use crate::tensor::{DenseTensor, IndexMap, Rearrangement};

/// Square attention factors `[H, I_δ, I_δ]`, outermost first.
#[derive(Debug, Clone)]
pub struct FactorChain<X> {
    factors: Vec<X>,
    heads: usize,
    sizes: Vec<usize>,
}

impl<X> FactorChain<X> {
    pub fn new<T: Scalar>(factors: Vec<X>) -> Result<Self>
    where
        X: TensorOps<T>,
    {
        let first = factors
            .first()
            .ok_or(WeaverError::EmptyInput("factor chain"))?;
        let heads = first.dims().first().copied().unwrap_or(0);
        let mut sizes = Vec::with_capacity(factors.len());
        for f in &factors {
            let s = f.dims();
            if s.len() != 3 || s[1] != s[2] {
                return Err(WeaverError::Ledger(format!(
                    "factor of shape {s:?} is not [H, I, I]"
                )));
            }
            if s[0] != heads {
                return Err(WeaverError::Ledger(format!(
                    "factor head count {} differs from {heads}",
                    s[0]
                )));
            }
            sizes.push(s[1]);
        }
        Ok(Self {
            factors,
            heads,
            sizes,
        })
    }

    /// Order Δ of the chain.
    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    /// `I_1 … I_Δ`
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn factors(&self) -> &[X] {
        &self.factors
    }
}

/// `[rows, cols]` of an operand at `depth` for chain sizes `I_0 … I_Δ`.
pub fn ledger_shape(chain: &[usize], depth: usize) -> Result<[usize; 2]> {
    let delta = chain
        .len()
        .checked_sub(1)
        .ok_or(WeaverError::EmptyInput("ledger"))?;
    if depth > delta + 1 {
        return Err(WeaverError::Ledger(format!(
            "depth {depth} beyond Δ+1 = {}",
            delta + 1
        )));
    }
    let size = |i: usize| chain.get(i).copied().unwrap_or(1);
    let rows: usize = (0..depth).map(size).product::<usize>()
        * (depth + 1..=delta + 1).map(size).product::<usize>();
    Ok([rows, size(depth)])
}

/// Operand tensor tagged with its vectorization depth.
#[derive(Debug, Clone)]
pub struct KmvOperand<X> {
    value: X,
    depth: usize,
    chain: Vec<usize>,
}

impl<X> KmvOperand<X> {
    /// `chain` lists `I_0 … I_Δ`; `value` must be `[H, rows, cols]` per the
    /// ledger at `depth`.
    pub fn new<T: Scalar>(value: X, depth: usize, chain: &[usize]) -> Result<Self>
    where
        X: TensorOps<T>,
    {
        let [rows, cols] = ledger_shape(chain, depth)?;
        let s = value.dims();
        if s.len() != 3 || s[1] != rows || s[2] != cols {
            return Err(WeaverError::Ledger(format!(
                "operand {s:?} at depth {depth} should be [H, {rows}, {cols}] for chain {chain:?}"
            )));
        }
        Ok(Self {
            value,
            depth,
            chain: chain.to_vec(),
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn chain(&self) -> &[usize] {
        &self.chain
    }

    pub fn value(&self) -> &X {
        &self.value
    }

    pub fn into_value(self) -> X {
        self.value
    }
}

fn axis_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("i{i}")).collect()
}

/// Mode order of the row index at `depth` followed by the column mode.
fn depth_modes(delta: usize, depth: usize) -> (Vec<usize>, usize) {
    let rows = (0..=delta + 1).filter(|&i| i != depth).collect();
    (rows, depth)
}

fn tumble_index(heads: usize, chain: &[usize], from: usize) -> Result<(Vec<usize>, IndexMap)> {
    let delta = chain.len() - 1;
    let names = axis_names(delta + 2);
    let side = |depth: usize| {
        let (rows, col) = depth_modes(delta, depth);
        let r: Vec<&str> = rows.iter().map(|&i| names[i].as_str()).collect();
        format!("h ({}) {}", r.join(" "), names[col])
    };
    let pattern = format!("{} -> {}", side(from), side(from - 1));
    let sizes: Vec<(&str, usize)> = names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), chain.get(i).copied().unwrap_or(1)))
        .collect();
    let [rows, cols] = ledger_shape(chain, from)?;
    let plan = Rearrangement::parse(&pattern)?.plan(&[heads, rows, cols], &sizes)?;
    Ok((plan.output_shape, plan.index))
}

/// Kronecker-Tumble from depth `d + 1` to depth `d`: a pure reindexing.
pub fn kron_tumble<T: Scalar, X: TensorOps<T>>(u: &KmvOperand<X>) -> Result<KmvOperand<X>> {
    if u.depth == 0 {
        return Err(WeaverError::Ledger("cannot tumble below depth 0".into()));
    }
    let heads = u.value.dims()[0];
    let (shape, index) = tumble_index(heads, &u.chain, u.depth)?;
    KmvOperand::new(u.value.gather(&shape, &index)?, u.depth - 1, &u.chain)
}

/// Precomputed index maps for (R)-PΔ-KMV on a fixed chain and head count.
#[derive(Debug, Clone)]
pub struct PkmvPlan {
    heads: usize,
    chain: Vec<usize>,
    /// column form `[H, ∏I, I_0]` to depth Δ+1
    input: (Vec<usize>, IndexMap),
    /// tumbles from depth Δ+1 down to 0
    tumbles: Vec<(Vec<usize>, IndexMap)>,
}

impl PkmvPlan {
    /// `chain` lists `I_0 … I_Δ`, with `I_0` the feature mode.
    pub fn new(heads: usize, chain: &[usize]) -> Result<Self> {
        if chain.len() < 2 || chain.contains(&0) || heads == 0 {
            return Err(WeaverError::Ledger(format!(
                "invalid chain {chain:?} with {heads} heads"
            )));
        }
        let delta = chain.len() - 1;
        let total: usize = chain.iter().product();
        let names = axis_names(delta + 1);
        let outer = names[1..].join(" ");
        let pattern = format!("h ({outer}) i0 -> h (i0 {outer})");
        let sizes: Vec<(&str, usize)> = names
            .iter()
            .map(|n| n.as_str())
            .zip(chain.iter().copied())
            .collect();
        let plan =
            Rearrangement::parse(&pattern)?.plan(&[heads, total / chain[0], chain[0]], &sizes)?;
        let input = (vec![heads, total, 1], plan.index);
        let tumbles = (1..=delta + 1)
            .rev()
            .map(|d| tumble_index(heads, chain, d))
            .collect::<Result<_>>()?;
        Ok(Self {
            heads,
            chain: chain.to_vec(),
            input,
            tumbles,
        })
    }

    pub fn chain(&self) -> &[usize] {
        &self.chain
    }

    /// Folds column-form features `[H, I_1⋯I_Δ, I_0]` into depth Δ+1.
    pub fn fold<T: Scalar, X: TensorOps<T>>(&self, v: &X) -> Result<KmvOperand<X>> {
        let [rows, cols] = ledger_shape(&self.chain, 0)?;
        let s = v.dims();
        if s != [self.heads, rows, cols] {
            return Err(WeaverError::Ledger(format!(
                "features {s:?} should be [{}, {rows}, {cols}]",
                self.heads
            )));
        }
        let value = v.gather(&self.input.0, &self.input.1)?;
        KmvOperand::new(value, self.chain.len(), &self.chain)
    }

    /// Right-handed recursion `U⟨d⟩ = (U⟨d+1⟩ Θ_{d+1}ᵀ)↰` for `d = Δ … 0`.
    /// Returns the depth-0 result `[H, I_1⋯I_Δ, I_0]`.
    pub fn apply<T: Scalar, X: TensorOps<T>>(
        &self,
        factors: &FactorChain<X>,
        v: &KmvOperand<X>,
    ) -> Result<X> {
        let delta = self.chain.len() - 1;
        if factors.order() != delta || factors.sizes() != &self.chain[1..] {
            return Err(WeaverError::Ledger(format!(
                "factor sizes {:?} do not match chain {:?}",
                factors.sizes(),
                self.chain
            )));
        }
        if factors.heads() != self.heads || v.value.dims()[0] != self.heads {
            return Err(WeaverError::Ledger(format!(
                "head count mismatch: plan {}, factors {}, operand {}",
                self.heads,
                factors.heads(),
                v.value.dims()[0]
            )));
        }
        if v.depth != delta + 1 || v.chain != self.chain {
            return Err(WeaverError::Ledger(format!(
                "operand at depth {} on chain {:?}, expected depth {} on {:?}",
                v.depth,
                v.chain,
                delta + 1,
                self.chain
            )));
        }
        let mut u = v.value.clone();
        for (step, (shape, index)) in self.tumbles.iter().enumerate() {
            // depth of `u` before this tumble is Δ+1−step; factor Θ_{depth}
            let depth = delta + 1 - step;
            if depth <= delta {
                u = u.batched_matmul(&factors.factors[depth - 1], true)?;
            }
            u = u.gather(shape, index)?;
        }
        Ok(u)
    }

    /// Convenience: fold column-form features and apply.
    pub fn apply_columns<T: Scalar, X: TensorOps<T>>(
        &self,
        factors: &FactorChain<X>,
        v: &X,
    ) -> Result<X> {
        let operand = self.fold(v)?;
        self.apply(factors, &operand)
    }
}

/// (R)-PΔ-KMV on a folded operand at depth Δ+1.
pub fn pkmv_efficient<T: Scalar, X: TensorOps<T>>(
    factors: &FactorChain<X>,
    v: &KmvOperand<X>,
) -> Result<X> {
    PkmvPlan::new(factors.heads(), v.chain())?.apply(factors, v)
}

/// Precomputed index maps for the basic P²-KMV.
#[derive(Debug, Clone)]
pub struct P2kmvBasicPlan {
    heads: usize,
    p: usize,
    n: usize,
    e: usize,
    to_matrix: IndexMap,
    from_matrix: IndexMap,
}

impl P2kmvBasicPlan {
    pub fn new(heads: usize, p: usize, n: usize, e: usize) -> Result<Self> {
        let sizes = [("p", p), ("n", n), ("e", e)];
        let to = Rearrangement::parse("h (p n) e -> h e n p")?.plan(&[heads, p * n, e], &sizes)?;
        let from = Rearrangement::parse("h e n p -> h (p n) e")?.plan(&[heads, e, n, p], &sizes)?;
        Ok(Self {
            heads,
            p,
            n,
            e,
            to_matrix: to.index,
            from_matrix: from.index,
        })
    }

    /// `U_e = Θ_S V_e Θ_Tᵀ` per feature column, with `V_e` the `N×P`
    /// matrix whose column-major vectorization is column `e` of `v`.
    pub fn apply<T: Scalar, X: TensorOps<T>>(&self, theta_t: &X, theta_s: &X, v: &X) -> Result<X> {
        let (h, p, n, e) = (self.heads, self.p, self.n, self.e);
        let expect = |x: &X, shape: &[usize], what: &str| -> Result<()> {
            if x.dims() != shape {
                return Err(WeaverError::Ledger(format!(
                    "{what} {:?} should be {shape:?}",
                    x.dims()
                )));
            }
            Ok(())
        };
        expect(theta_t, &[h, p, p], "temporal factor")?;
        expect(theta_s, &[h, n, n], "spatial factor")?;
        expect(v, &[h, p * n, e], "features")?;
        let vm = v.gather(&[h, e, n, p], &self.to_matrix)?;
        let s = theta_s.reshape(&[h, 1, n, n])?;
        let t = theta_t.reshape(&[h, 1, p, p])?;
        let u = s.batched_matmul(&vm, false)?.batched_matmul(&t, true)?;
        u.gather(&[h, p * n, e], &self.from_matrix)
    }
}

/// Basic P²-KMV: `theta_t` `[H,P,P]`, `theta_s` `[H,N,N]`, `v` `[H,P·N,E]`.
pub fn p2kmv_basic<T: Scalar, X: TensorOps<T>>(theta_t: &X, theta_s: &X, v: &X) -> Result<X> {
    let (td, sd, vd) = (theta_t.dims(), theta_s.dims(), v.dims());
    if td.len() != 3 || sd.len() != 3 || vd.len() != 3 {
        return Err(WeaverError::Ledger(format!(
            "expected rank-3 inputs, got {td:?}, {sd:?}, {vd:?}"
        )));
    }
    P2kmvBasicPlan::new(vd[0], td[1], sd[1], vd[2])?.apply(theta_t, theta_s, v)
}

/// Dense Kronecker product: block `(i, j)` is `a[i, j] · b`.
pub fn kron_dense<T: Scalar>(a: &DenseTensor<T>, b: &DenseTensor<T>) -> Result<DenseTensor<T>> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(WeaverError::InvalidArgument(format!(
            "kron_dense needs matrices, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (a1, a2) = (a.shape()[0], a.shape()[1]);
    let (b1, b2) = (b.shape()[0], b.shape()[1]);
    Ok(DenseTensor::from_fn(&[a1 * b1, a2 * b2], |ix| {
        a.get(&[ix[0] / b1, ix[1] / b2]) * b.get(&[ix[0] % b1, ix[1] % b2])
    }))
}

/// `Θ_1 ⊗ Θ_2 ⊗ … ⊗ Θ_Δ`, dense.
pub fn kron_dense_chain<T: Scalar>(factors: &[DenseTensor<T>]) -> Result<DenseTensor<T>> {
    let (first, rest) = factors
        .split_first()
        .ok_or(WeaverError::EmptyInput("kron chain"))?;
    rest.iter()
        .try_fold(first.clone(), |acc, f| kron_dense(&acc, f))
}

/// `(Θ_T ⊗ Θ_S) v`, evaluated as `Θ_T V Θ_Sᵀ` on the row-major `P×N` fold.
pub fn kmv_reference<T: Scalar>(
    theta_t: &DenseTensor<T>,
    theta_s: &DenseTensor<T>,
    v: &DenseTensor<T>,
) -> Result<DenseTensor<T>> {
    let (p, n) = (theta_t.shape()[0], theta_s.shape()[0]);
    if theta_t.shape() != [p, p] || theta_s.shape() != [n, n] {
        return Err(WeaverError::InvalidArgument(
            "factors must be square matrices".into(),
        ));
    }
    if v.numel() != p * n {
        return Err(WeaverError::shape("kmv_reference", &[p * n], v.shape()));
    }
    let vm = v.reshape(&[p, n])?;
    theta_t
        .matmul(&vm)?
        .batched_matmul(theta_s, true)?
        .reshape(&[p * n])
}

/// Single head-mixing matrix `W_O` whose application to head-concatenated
/// outputs `[Y_1 … Y_H]` equals `Σ_h Y_h W^(h)`: the `W^(h)` stacked by rows.
pub fn wikps_expand<T: Scalar>(per_head: &[DenseTensor<T>]) -> Result<DenseTensor<T>> {
    let first = per_head
        .first()
        .ok_or(WeaverError::EmptyInput("wikps_expand"))?;
    let h = per_head.len();
    if first.rank() != 2 || first.shape()[1] % h != 0 {
        return Err(WeaverError::InvalidArgument(format!(
            "per-head weight {:?} is not E×HE for H = {h}",
            first.shape()
        )));
    }
    let e = first.shape()[0];
    if first.shape()[1] != h * e {
        return Err(WeaverError::shape(
            "wikps_expand",
            &[e, h * e],
            first.shape(),
        ));
    }
    for w in per_head {
        if w.shape() != first.shape() {
            return Err(WeaverError::shape("wikps_expand", first.shape(), w.shape()));
        }
    }
    let refs: Vec<&DenseTensor<T>> = per_head.iter().collect();
    DenseTensor::concat(&refs, 0)
}

/// Kronecker graph product of a temporal and a spatial adjacency.
#[derive(Debug, Clone)]
pub struct KronGraph {
    a_t: Vec<Vec<bool>>,
    a_s: Vec<Vec<bool>>,
}

impl KronGraph {
    pub fn temporal_size(&self) -> usize {
        self.a_t.len()
    }

    pub fn spatial_size(&self) -> usize {
        self.a_s.len()
    }

    /// Edge between `(σ₁, τ₁)` and `(σ₂, τ₂)` iff both factor edges exist.
    pub fn has_edge(&self, s1: usize, t1: usize, s2: usize, t2: usize) -> bool {
        self.a_s[s1][s2] && self.a_t[t1][t2]
    }

    /// Dense 0/1 adjacency with row index `τ·N + σ`.
    pub fn adjacency<T: Scalar>(&self) -> DenseTensor<T> {
        let (p, n) = (self.temporal_size(), self.spatial_size());
        DenseTensor::from_fn(&[p * n, p * n], |ix| {
            let (t1, s1) = (ix[0] / n, ix[0] % n);
            let (t2, s2) = (ix[1] / n, ix[1] % n);
            if self.has_edge(s1, t1, s2, t2) {
                T::one()
            } else {
                T::zero()
            }
        })
    }
}

pub fn kron_graph_edges<T: Scalar>(
    a_t: &DenseTensor<T>,
    a_s: &DenseTensor<T>,
) -> Result<KronGraph> {
    let to_bool = |a: &DenseTensor<T>, what: &str| -> Result<Vec<Vec<bool>>> {
        if a.rank() != 2 || a.shape()[0] != a.shape()[1] {
            return Err(WeaverError::InvalidArgument(format!(
                "{what} adjacency {:?} is not square",
                a.shape()
            )));
        }
        let n = a.shape()[0];
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let v = a.get(&[i, j]);
                        if v == T::one() {
                            Ok(true)
                        } else if v == T::zero() {
                            Ok(false)
                        } else {
                            Err(WeaverError::InvalidArgument(format!(
                                "{what} adjacency entry {v} is not 0/1"
                            )))
                        }
                    })
                    .collect()
            })
            .collect()
    };
    Ok(KronGraph {
        a_t: to_bool(a_t, "temporal")?,
        a_s: to_bool(a_s, "spatial")?,
    })
}
