//! Differentiable tensor primitives.
//!
//! Each op computes its forward value eagerly and, when any input is tracked,
//! records a closure that pushes adjoints into its parents. Shape errors are
//! programmer errors and panic; numeric-range validation belongs to config
//! parsing.

use super::scalar::{s, Scalar};
use super::Tensor;
use crate::rng::{counter_u64, u64_to_unit_f64};

fn same_shape<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, what: &str) {
    assert_eq!(
        a.shape(),
        b.shape(),
        "{what}: shape {:?} vs {:?}",
        a.shape(),
        b.shape()
    );
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

pub fn add<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    same_shape(a, b, "add");
    let vals = a.values().iter().zip(b.values()).map(|(&x, &y)| x + y).collect();
    let (pa, pb) = (a.clone(), b.clone());
    Tensor::from_op(
        a.shape().to_vec(),
        vals,
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            if pa.requires_grad() {
                pa.accumulate(g);
            }
            if pb.requires_grad() {
                pb.accumulate(g);
            }
        }),
    )
}

pub fn sub<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    same_shape(a, b, "sub");
    let vals = a.values().iter().zip(b.values()).map(|(&x, &y)| x - y).collect();
    let (pa, pb) = (a.clone(), b.clone());
    Tensor::from_op(
        a.shape().to_vec(),
        vals,
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            if pa.requires_grad() {
                pa.accumulate(g);
            }
            if pb.requires_grad() {
                let neg: Vec<S> = g.iter().map(|&x| -x).collect();
                pb.accumulate(&neg);
            }
        }),
    )
}

pub fn mul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    same_shape(a, b, "mul");
    let vals = a.values().iter().zip(b.values()).map(|(&x, &y)| x * y).collect();
    let (pa, pb) = (a.clone(), b.clone());
    let (av, bv) = (a.values().to_vec(), b.values().to_vec());
    Tensor::from_op(
        a.shape().to_vec(),
        vals,
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            if pa.requires_grad() {
                let da: Vec<S> = g.iter().zip(&bv).map(|(&g, &y)| g * y).collect();
                pa.accumulate(&da);
            }
            if pb.requires_grad() {
                let db: Vec<S> = g.iter().zip(&av).map(|(&g, &x)| g * x).collect();
                pb.accumulate(&db);
            }
        }),
    )
}

pub fn neg<S: Scalar>(a: &Tensor<S>) -> Tensor<S> {
    scale(a, -1.0)
}

/// Multiply by a plain constant.
pub fn scale<S: Scalar>(a: &Tensor<S>, c: f64) -> Tensor<S> {
    let c = s::<S>(c);
    let vals = a.values().iter().map(|&x| x * c).collect();
    let pa = a.clone();
    Tensor::from_op(
        a.shape().to_vec(),
        vals,
        vec![a.clone()],
        Box::new(move |g| {
            let da: Vec<S> = g.iter().map(|&x| x * c).collect();
            pa.accumulate(&da);
        }),
    )
}

pub fn add_const<S: Scalar>(a: &Tensor<S>, c: f64) -> Tensor<S> {
    let c = s::<S>(c);
    let vals = a.values().iter().map(|&x| x + c).collect();
    let pa = a.clone();
    Tensor::from_op(
        a.shape().to_vec(),
        vals,
        vec![a.clone()],
        Box::new(move |g| pa.accumulate(g)),
    )
}

pub fn square<S: Scalar>(a: &Tensor<S>) -> Tensor<S> {
    mul(a, a)
}

pub fn abs<S: Scalar>(a: &Tensor<S>) -> Tensor<S> {
    let vals = a.values().iter().map(|&x| x.abs()).collect();
    let pa = a.clone();
    let av = a.values().to_vec();
    Tensor::from_op(
        a.shape().to_vec(),
        vals,
        vec![a.clone()],
        Box::new(move |g| {
            let da: Vec<S> = g
                .iter()
                .zip(&av)
                .map(|(&g, &x)| if x >= S::zero() { g } else { -g })
                .collect();
            pa.accumulate(&da);
        }),
    )
}

pub fn exp<S: Scalar>(a: &Tensor<S>) -> Tensor<S> {
    let vals: Vec<S> = a.values().iter().map(|&x| x.exp()).collect();
    let pa = a.clone();
    let out = vals.clone();
    Tensor::from_op(
        a.shape().to_vec(),
        vals,
        vec![a.clone()],
        Box::new(move |g| {
            let da: Vec<S> = g.iter().zip(&out).map(|(&g, &y)| g * y).collect();
            pa.accumulate(&da);
        }),
    )
}

pub fn sqrt<S: Scalar>(a: &Tensor<S>) -> Tensor<S> {
    let vals: Vec<S> = a.values().iter().map(|&x| x.sqrt()).collect();
    let pa = a.clone();
    let out = vals.clone();
    let half = s::<S>(0.5);
    Tensor::from_op(
        a.shape().to_vec(),
        vals,
        vec![a.clone()],
        Box::new(move |g| {
            let da: Vec<S> = g
                .iter()
                .zip(&out)
                .map(|(&g, &y)| {
                    if y > S::zero() {
                        g * half / y
                    } else {
                        S::zero()
                    }
                })
                .collect();
            pa.accumulate(&da);
        }),
    )
}

pub fn relu<S: Scalar>(a: &Tensor<S>) -> Tensor<S> {
    leaky_relu(a, 0.0)
}

pub fn leaky_relu<S: Scalar>(a: &Tensor<S>, slope: f64) -> Tensor<S> {
    let k = s::<S>(slope);
    let vals = a
        .values()
        .iter()
        .map(|&x| if x > S::zero() { x } else { k * x })
        .collect();
    let pa = a.clone();
    let av = a.values().to_vec();
    Tensor::from_op(
        a.shape().to_vec(),
        vals,
        vec![a.clone()],
        Box::new(move |g| {
            let da: Vec<S> = g
                .iter()
                .zip(&av)
                .map(|(&g, &x)| if x > S::zero() { g } else { g * k })
                .collect();
            pa.accumulate(&da);
        }),
    )
}

pub fn sigmoid<S: Scalar>(a: &Tensor<S>) -> Tensor<S> {
    let one = S::one();
    let vals: Vec<S> = a
        .values()
        .iter()
        .map(|&x| {
            // Stable in both tails.
            if x >= S::zero() {
                one / (one + (-x).exp())
            } else {
                let e = x.exp();
                e / (one + e)
            }
        })
        .collect();
    let pa = a.clone();
    let out = vals.clone();
    Tensor::from_op(
        a.shape().to_vec(),
        vals,
        vec![a.clone()],
        Box::new(move |g| {
            let da: Vec<S> = g
                .iter()
                .zip(&out)
                .map(|(&g, &y)| g * y * (S::one() - y))
                .collect();
            pa.accumulate(&da);
        }),
    )
}

// ---------------------------------------------------------------------------
// broadcast binary ops: rhs is same-shape, a row vector [1, d] (or [d]),
// a column vector [n, 1], or a scalar [1]
// ---------------------------------------------------------------------------

#[derive(Clone, Copy)]
enum BcastKind {
    Row,
    Col,
    Scalar,
}

fn bcast_kind<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, what: &str) -> BcastKind {
    let (n, d) = (a.rows(), a.cols());
    if b.len() == 1 {
        BcastKind::Scalar
    } else if b.len() == d && b.rows() <= 1 || (b.shape().len() == 2 && b.shape() == [1, d]) {
        BcastKind::Row
    } else if b.shape().len() == 2 && b.shape() == [n, 1] {
        BcastKind::Col
    } else {
        panic!(
            "{what}: cannot broadcast {:?} against {:?}",
            b.shape(),
            a.shape()
        );
    }
}

fn bcast_index(kind: BcastKind, d: usize, i: usize) -> usize {
    match kind {
        BcastKind::Scalar => 0,
        BcastKind::Row => i % d,
        BcastKind::Col => i / d,
    }
}

macro_rules! bcast_op {
    ($name:ident, $fwd:expr, $da:expr, $db:expr) => {
        pub fn $name<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
            let kind = bcast_kind(a, b, stringify!($name));
            let d = a.cols();
            let bv = b.values();
            let vals: Vec<S> = a
                .values()
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    let y = bv[bcast_index(kind, d, i)];
                    ($fwd)(x, y)
                })
                .collect();
            let (pa, pb) = (a.clone(), b.clone());
            let (av, bvv) = (a.values().to_vec(), b.values().to_vec());
            let blen = b.len();
            Tensor::from_op(
                a.shape().to_vec(),
                vals,
                vec![a.clone(), b.clone()],
                Box::new(move |g| {
                    if pa.requires_grad() {
                        let da: Vec<S> = g
                            .iter()
                            .enumerate()
                            .map(|(i, &g)| {
                                let (x, y) = (av[i], bvv[bcast_index(kind, d, i)]);
                                ($da)(g, x, y)
                            })
                            .collect();
                        pa.accumulate(&da);
                    }
                    if pb.requires_grad() {
                        let mut db = vec![S::zero(); blen];
                        for (i, &g) in g.iter().enumerate() {
                            let j = bcast_index(kind, d, i);
                            let (x, y) = (av[i], bvv[j]);
                            db[j] += ($db)(g, x, y);
                        }
                        pb.accumulate(&db);
                    }
                }),
            )
        }
    };
}

bcast_op!(
    bcast_add,
    |x: S, y: S| x + y,
    |g: S, _x: S, _y: S| g,
    |g: S, _x: S, _y: S| g
);
bcast_op!(
    bcast_sub,
    |x: S, y: S| x - y,
    |g: S, _x: S, _y: S| g,
    |g: S, _x: S, _y: S| -g
);
bcast_op!(
    bcast_mul,
    |x: S, y: S| x * y,
    |g: S, _x: S, y: S| g * y,
    |g: S, x: S, _y: S| g * x
);
bcast_op!(
    bcast_div,
    |x: S, y: S| x / y,
    |g: S, _x: S, y: S| g / y,
    |g: S, x: S, y: S| -g * x / (y * y)
);

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
fn gemm_acc<S: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[S],
    a_t: bool,
    b: &[S],
    b_t: bool,
    out: &mut [S],
) {
    // Strides express transposition without copying; `m`/`k`/`n` are the
    // logical (post-transpose) dimensions, so a transposed A is physically
    // [k, m] and a transposed B is physically [n, k].
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        S::gemm(
            m,
            k,
            n,
            S::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            S::one(),
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// C[m,n] = A[m,k] @ B[k,n]
pub fn matmul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    let (m, k) = (a.rows(), a.cols());
    let (kb, n) = (b.rows(), b.cols());
    assert_eq!(k, kb, "matmul: {:?} @ {:?}", a.shape(), b.shape());
    let mut vals = vec![S::zero(); m * n];
    gemm_acc(m, k, n, a.values(), false, b.values(), false, &mut vals);
    let (pa, pb) = (a.clone(), b.clone());
    let (av, bv) = (a.values().to_vec(), b.values().to_vec());
    Tensor::from_op(
        vec![m, n],
        vals,
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            if pa.requires_grad() {
                // dA = g @ B^T
                let mut da = vec![S::zero(); m * k];
                gemm_acc(m, n, k, g, false, &bv, true, &mut da);
                pa.accumulate(&da);
            }
            if pb.requires_grad() {
                // dB = A^T @ g
                let mut db = vec![S::zero(); k * n];
                gemm_acc(k, m, n, &av, true, g, false, &mut db);
                pb.accumulate(&db);
            }
        }),
    )
}

/// C[m,n] = A[m,k] @ B[n,k]^T  (rows of B as columns)
pub fn matmul_nt<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    let (m, k) = (a.rows(), a.cols());
    let (n, kb) = (b.rows(), b.cols());
    assert_eq!(k, kb, "matmul_nt: {:?} @ {:?}^T", a.shape(), b.shape());
    let mut vals = vec![S::zero(); m * n];
    gemm_acc(m, k, n, a.values(), false, b.values(), true, &mut vals);
    let (pa, pb) = (a.clone(), b.clone());
    let (av, bv) = (a.values().to_vec(), b.values().to_vec());
    Tensor::from_op(
        vec![m, n],
        vals,
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            if pa.requires_grad() {
                // dA = g @ B
                let mut da = vec![S::zero(); m * k];
                gemm_acc(m, n, k, g, false, &bv, false, &mut da);
                pa.accumulate(&da);
            }
            if pb.requires_grad() {
                // dB = g^T @ A
                let mut db = vec![S::zero(); n * k];
                gemm_acc(n, m, k, g, true, &av, false, &mut db);
                pb.accumulate(&db);
            }
        }),
    )
}

// ---------------------------------------------------------------------------
// structure: concat / slice / gather / scatter
// ---------------------------------------------------------------------------

/// Stack matrices with equal width along rows.
pub fn concat_rows<S: Scalar>(parts: &[Tensor<S>]) -> Tensor<S> {
    assert!(!parts.is_empty(), "concat_rows: empty");
    let d = parts[0].cols();
    let mut vals = Vec::new();
    let mut rows = 0usize;
    for p in parts {
        assert_eq!(p.cols(), d, "concat_rows: width mismatch");
        vals.extend_from_slice(p.values());
        rows += p.rows();
    }
    let owned: Vec<Tensor<S>> = parts.to_vec();
    let sizes: Vec<usize> = parts.iter().map(|p| p.len()).collect();
    Tensor::from_op(
        vec![rows, d],
        vals,
        owned.clone(),
        Box::new(move |g| {
            let mut off = 0;
            for (p, &sz) in owned.iter().zip(&sizes) {
                if p.requires_grad() {
                    p.accumulate(&g[off..off + sz]);
                }
                off += sz;
            }
        }),
    )
}

/// Concatenate matrices with equal row count along columns.
pub fn concat_cols<S: Scalar>(parts: &[Tensor<S>]) -> Tensor<S> {
    assert!(!parts.is_empty(), "concat_cols: empty");
    let n = parts[0].rows();
    let widths: Vec<usize> = parts.iter().map(|p| p.cols()).collect();
    let d: usize = widths.iter().sum();
    let mut vals = vec![S::zero(); n * d];
    let mut off = 0;
    for (p, &w) in parts.iter().zip(&widths) {
        assert_eq!(p.rows(), n, "concat_cols: row mismatch");
        for r in 0..n {
            vals[r * d + off..r * d + off + w].copy_from_slice(&p.values()[r * w..(r + 1) * w]);
        }
        off += w;
    }
    let owned: Vec<Tensor<S>> = parts.to_vec();
    Tensor::from_op(
        vec![n, d],
        vals,
        owned.clone(),
        Box::new(move |g| {
            let mut off = 0;
            for (p, &w) in owned.iter().zip(&widths) {
                if p.requires_grad() {
                    let mut dp = vec![S::zero(); n * w];
                    for r in 0..n {
                        dp[r * w..(r + 1) * w]
                            .copy_from_slice(&g[r * d + off..r * d + off + w]);
                    }
                    p.accumulate(&dp);
                }
                off += w;
            }
        }),
    )
}

/// Columns [c0, c1) of a matrix.
pub fn slice_cols<S: Scalar>(a: &Tensor<S>, c0: usize, c1: usize) -> Tensor<S> {
    let (n, d) = (a.rows(), a.cols());
    assert!(c0 < c1 && c1 <= d, "slice_cols: [{c0},{c1}) of width {d}");
    let w = c1 - c0;
    let mut vals = vec![S::zero(); n * w];
    for r in 0..n {
        vals[r * w..(r + 1) * w].copy_from_slice(&a.values()[r * d + c0..r * d + c1]);
    }
    let pa = a.clone();
    Tensor::from_op(
        vec![n, w],
        vals,
        vec![a.clone()],
        Box::new(move |g| {
            let mut da = vec![S::zero(); n * d];
            for r in 0..n {
                da[r * d + c0..r * d + c1].copy_from_slice(&g[r * w..(r + 1) * w]);
            }
            pa.accumulate(&da);
        }),
    )
}

/// Select rows by index; repeated indices are allowed (grads accumulate).
/// Doubles as embedding lookup when `a` is an embedding table.
pub fn gather_rows<S: Scalar>(a: &Tensor<S>, idx: &[usize]) -> Tensor<S> {
    let (n, d) = (a.rows(), a.cols());
    let mut vals = vec![S::zero(); idx.len() * d];
    for (r, &i) in idx.iter().enumerate() {
        assert!(i < n, "gather_rows: row {i} of {n}");
        vals[r * d..(r + 1) * d].copy_from_slice(&a.values()[i * d..(i + 1) * d]);
    }
    let pa = a.clone();
    let idx = idx.to_vec();
    let out_rows = idx.len();
    Tensor::from_op(
        vec![out_rows, d],
        vals,
        vec![a.clone()],
        Box::new(move |g| {
            let mut da = vec![S::zero(); n * d];
            for (r, &i) in idx.iter().enumerate() {
                for c in 0..d {
                    da[i * d + c] += g[r * d + c];
                }
            }
            pa.accumulate(&da);
        }),
    )
}

/// Arbitrary flat-index gather with a caller-chosen output shape.
pub fn gather_flat<S: Scalar>(a: &Tensor<S>, idx: &[usize], shape: &[usize]) -> Tensor<S> {
    assert_eq!(shape.iter().product::<usize>(), idx.len(), "gather_flat shape");
    let av = a.values();
    let vals: Vec<S> = idx
        .iter()
        .map(|&i| {
            assert!(i < av.len(), "gather_flat: {i} of {}", av.len());
            av[i]
        })
        .collect();
    let pa = a.clone();
    let idx = idx.to_vec();
    let alen = a.len();
    Tensor::from_op(
        shape.to_vec(),
        vals,
        vec![a.clone()],
        Box::new(move |g| {
            let mut da = vec![S::zero(); alen];
            for (r, &i) in idx.iter().enumerate() {
                da[i] += g[r];
            }
            pa.accumulate(&da);
        }),
    )
}

/// Copy of `base` with row `idx[k]` replaced by row k of `new`.
pub fn replace_rows<S: Scalar>(base: &Tensor<S>, idx: &[usize], new: &Tensor<S>) -> Tensor<S> {
    let (n, d) = (base.rows(), base.cols());
    assert_eq!(new.cols(), d, "replace_rows width");
    assert_eq!(new.rows(), idx.len(), "replace_rows count");
    let mut vals = base.values().to_vec();
    for (k, &i) in idx.iter().enumerate() {
        assert!(i < n, "replace_rows: row {i} of {n}");
        vals[i * d..(i + 1) * d].copy_from_slice(&new.values()[k * d..(k + 1) * d]);
    }
    let (pb, pn) = (base.clone(), new.clone());
    let idx = idx.to_vec();
    Tensor::from_op(
        vec![n, d],
        vals,
        vec![base.clone(), new.clone()],
        Box::new(move |g| {
            if pb.requires_grad() {
                let mut db = g.to_vec();
                for &i in &idx {
                    for c in 0..d {
                        db[i * d + c] = S::zero();
                    }
                }
                pb.accumulate(&db);
            }
            if pn.requires_grad() {
                let mut dn = vec![S::zero(); idx.len() * d];
                for (k, &i) in idx.iter().enumerate() {
                    dn[k * d..(k + 1) * d].copy_from_slice(&g[i * d..(i + 1) * d]);
                }
                pn.accumulate(&dn);
            }
        }),
    )
}

/// Mean of rows per group. Empty groups yield zero rows and pass no gradient.
pub fn segment_mean<S: Scalar>(a: &Tensor<S>, groups: &[usize], n_groups: usize) -> Tensor<S> {
    let (n, d) = (a.rows(), a.cols());
    assert_eq!(groups.len(), n, "segment_mean: {} ids for {n} rows", groups.len());
    let mut counts = vec![0usize; n_groups];
    for &g in groups {
        assert!(g < n_groups, "segment_mean: group {g} of {n_groups}");
        counts[g] += 1;
    }
    let mut vals = vec![S::zero(); n_groups * d];
    for (r, &g) in groups.iter().enumerate() {
        for c in 0..d {
            vals[g * d + c] += a.values()[r * d + c];
        }
    }
    for (g, &cnt) in counts.iter().enumerate() {
        if cnt > 0 {
            let inv = S::one() / s::<S>(cnt as f64);
            for c in 0..d {
                vals[g * d + c] *= inv;
            }
        }
    }
    let pa = a.clone();
    let groups = groups.to_vec();
    Tensor::from_op(
        vec![n_groups, d],
        vals,
        vec![a.clone()],
        Box::new(move |g| {
            let mut da = vec![S::zero(); n * d];
            for (r, &grp) in groups.iter().enumerate() {
                let inv = S::one() / s::<S>(counts[grp] as f64);
                for c in 0..d {
                    da[r * d + c] = g[grp * d + c] * inv;
                }
            }
            pa.accumulate(&da);
        }),
    )
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

pub fn sum_all<S: Scalar>(a: &Tensor<S>) -> Tensor<S> {
    let total = a.values().iter().fold(S::zero(), |acc, &x| acc + x);
    let pa = a.clone();
    let len = a.len();
    Tensor::from_op(
        vec![1],
        vec![total],
        vec![a.clone()],
        Box::new(move |g| {
            pa.accumulate(&vec![g[0]; len]);
        }),
    )
}

pub fn mean_all<S: Scalar>(a: &Tensor<S>) -> Tensor<S> {
    scale(&sum_all(a), 1.0 / a.len() as f64)
}

/// Column means: [n, d] -> [1, d].
pub fn mean_rows<S: Scalar>(a: &Tensor<S>) -> Tensor<S> {
    let (n, d) = (a.rows(), a.cols());
    assert!(n > 0, "mean_rows on empty tensor");
    let inv = S::one() / s::<S>(n as f64);
    let mut vals = vec![S::zero(); d];
    for r in 0..n {
        for (c, v) in vals.iter_mut().enumerate() {
            *v += a.values()[r * d + c];
        }
    }
    for v in &mut vals {
        *v *= inv;
    }
    let pa = a.clone();
    Tensor::from_op(
        vec![1, d],
        vals,
        vec![a.clone()],
        Box::new(move |g| {
            let mut da = vec![S::zero(); n * d];
            for r in 0..n {
                for c in 0..d {
                    da[r * d + c] = g[c] * inv;
                }
            }
            pa.accumulate(&da);
        }),
    )
}

/// Row means: [n, d] -> [n, 1].
pub fn mean_cols<S: Scalar>(a: &Tensor<S>) -> Tensor<S> {
    let (n, d) = (a.rows(), a.cols());
    assert!(d > 0, "mean_cols on empty rows");
    let inv = S::one() / s::<S>(d as f64);
    let vals: Vec<S> = (0..n)
        .map(|r| {
            a.values()[r * d..(r + 1) * d]
                .iter()
                .fold(S::zero(), |acc, &x| acc + x)
                * inv
        })
        .collect();
    let pa = a.clone();
    Tensor::from_op(
        vec![n, 1],
        vals,
        vec![a.clone()],
        Box::new(move |g| {
            let mut da = vec![S::zero(); n * d];
            for r in 0..n {
                for c in 0..d {
                    da[r * d + c] = g[r] * inv;
                }
            }
            pa.accumulate(&da);
        }),
    )
}

/// Row sums: [n, d] -> [n, 1].
pub fn rowwise_sum<S: Scalar>(a: &Tensor<S>) -> Tensor<S> {
    let (n, d) = (a.rows(), a.cols());
    let vals: Vec<S> = (0..n)
        .map(|r| {
            a.values()[r * d..(r + 1) * d]
                .iter()
                .fold(S::zero(), |acc, &x| acc + x)
        })
        .collect();
    let pa = a.clone();
    Tensor::from_op(
        vec![n, 1],
        vals,
        vec![a.clone()],
        Box::new(move |g| {
            let mut da = vec![S::zero(); n * d];
            for r in 0..n {
                for c in 0..d {
                    da[r * d + c] = g[r];
                }
            }
            pa.accumulate(&da);
        }),
    )
}

// ---------------------------------------------------------------------------
// softmax / dropout
// ---------------------------------------------------------------------------

/// Row-wise softmax, numerically stable.
pub fn softmax_rows<S: Scalar>(a: &Tensor<S>) -> Tensor<S> {
    let (n, d) = (a.rows(), a.cols());
    let mut vals = vec![S::zero(); n * d];
    for r in 0..n {
        let row = &a.values()[r * d..(r + 1) * d];
        let m = row.iter().fold(S::neg_infinity(), |acc, &x| acc.max(x));
        let mut z = S::zero();
        for c in 0..d {
            let e = (row[c] - m).exp();
            vals[r * d + c] = e;
            z += e;
        }
        for c in 0..d {
            vals[r * d + c] /= z;
        }
    }
    let pa = a.clone();
    let out = vals.clone();
    Tensor::from_op(
        vec![n, d],
        vals,
        vec![a.clone()],
        Box::new(move |g| {
            let mut da = vec![S::zero(); n * d];
            for r in 0..n {
                let y = &out[r * d..(r + 1) * d];
                let gr = &g[r * d..(r + 1) * d];
                let dot = y
                    .iter()
                    .zip(gr)
                    .fold(S::zero(), |acc, (&y, &g)| acc + y * g);
                for c in 0..d {
                    da[r * d + c] = y[c] * (gr[c] - dot);
                }
            }
            pa.accumulate(&da);
        }),
    )
}

/// Inverted dropout with a counter-based mask: deterministic given
/// (key, element index), scaled by 1/(1-p) so expectation is identity.
pub fn dropout<S: Scalar>(a: &Tensor<S>, p: f64, key: u64, train: bool) -> Tensor<S> {
    assert!((0.0..1.0).contains(&p), "dropout p={p} outside [0,1)");
    if !train || p == 0.0 {
        return a.clone();
    }
    let keep_scale = s::<S>(1.0 / (1.0 - p));
    let mask: Vec<S> = (0..a.len())
        .map(|i| {
            if u64_to_unit_f64(counter_u64(key, i as u64)) < p {
                S::zero()
            } else {
                keep_scale
            }
        })
        .collect();
    let vals = a.values().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
    let pa = a.clone();
    Tensor::from_op(
        a.shape().to_vec(),
        vals,
        vec![a.clone()],
        Box::new(move |g| {
            let da: Vec<S> = g.iter().zip(&mask).map(|(&g, &m)| g * m).collect();
            pa.accumulate(&da);
        }),
    )
}

// ---------------------------------------------------------------------------
// fused losses
// ---------------------------------------------------------------------------

/// Mean cross-entropy of row-wise logits against integer targets.
pub fn cross_entropy_mean<S: Scalar>(logits: &Tensor<S>, targets: &[usize]) -> Tensor<S> {
    let (n, d) = (logits.rows(), logits.cols());
    assert_eq!(targets.len(), n, "cross_entropy: {} targets for {n} rows", targets.len());
    let mut total = S::zero();
    let mut probs = vec![S::zero(); n * d];
    for r in 0..n {
        let row = &logits.values()[r * d..(r + 1) * d];
        let t = targets[r];
        assert!(t < d, "cross_entropy: target {t} of {d}");
        let m = row.iter().fold(S::neg_infinity(), |acc, &x| acc.max(x));
        let mut z = S::zero();
        for c in 0..d {
            let e = (row[c] - m).exp();
            probs[r * d + c] = e;
            z += e;
        }
        for c in 0..d {
            probs[r * d + c] /= z;
        }
        total += z.ln() + m - row[t];
    }
    let mean = total / s::<S>(n as f64);
    let pa = logits.clone();
    let targets = targets.to_vec();
    Tensor::from_op(
        vec![1],
        vec![mean],
        vec![logits.clone()],
        Box::new(move |g| {
            let inv = g[0] / s::<S>(n as f64);
            let mut da = probs.clone();
            for (r, &t) in targets.iter().enumerate() {
                da[r * d + t] -= S::one();
            }
            for v in &mut da {
                *v *= inv;
            }
            pa.accumulate(&da);
        }),
    )
}

/// Mean binary cross-entropy over all elements, from logits.
/// `targets` are constants in [0, 1].
pub fn bce_with_logits_mean<S: Scalar>(logits: &Tensor<S>, targets: &[S]) -> Tensor<S> {
    assert_eq!(targets.len(), logits.len(), "bce: target count");
    assert!(!targets.is_empty(), "bce: empty");
    let n = logits.len();
    let mut total = S::zero();
    for (&x, &y) in logits.values().iter().zip(targets) {
        // max(x,0) - x*y + ln(1 + exp(-|x|))
        total += x.max(S::zero()) - x * y + (-x.abs()).exp().ln_1p();
    }
    let mean = total / s::<S>(n as f64);
    let pa = logits.clone();
    let xv = logits.values().to_vec();
    let targets = targets.to_vec();
    Tensor::from_op(
        vec![1],
        vec![mean],
        vec![logits.clone()],
        Box::new(move |g| {
            let inv = g[0] / s::<S>(n as f64);
            let da: Vec<S> = xv
                .iter()
                .zip(&targets)
                .map(|(&x, &y)| {
                    let sig = if x >= S::zero() {
                        S::one() / (S::one() + (-x).exp())
                    } else {
                        let e = x.exp();
                        e / (S::one() + e)
                    };
                    (sig - y) * inv
                })
                .collect();
            pa.accumulate(&da);
        }),
    )
}

// ---------------------------------------------------------------------------
// composites
// ---------------------------------------------------------------------------

/// Row-wise dot products: [n, d] x [n, d] -> [n, 1].
pub fn dot_rows<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    rowwise_sum(&mul(a, b))
}

/// Row-wise L2 norms with an epsilon floor: [n, d] -> [n, 1].
pub fn rowwise_l2<S: Scalar>(a: &Tensor<S>, eps: f64) -> Tensor<S> {
    sqrt(&add_const(&rowwise_sum(&square(a)), eps))
}

/// L2-normalize rows.
pub fn normalize_rows<S: Scalar>(a: &Tensor<S>, eps: f64) -> Tensor<S> {
    bcast_div(a, &rowwise_l2(a, eps))
}

/// Row-wise cosine similarity: [n, d] x [n, d] -> [n, 1].
pub fn cosine_rows<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, eps: f64) -> Tensor<S> {
    let num = dot_rows(a, b);
    let den = mul(&rowwise_l2(a, eps), &rowwise_l2(b, eps));
    bcast_div(&num, &den) // same shape: plain elementwise divide
}

/// PReLU with a learned slope tensor (single element or per-column row).
pub fn prelu<S: Scalar>(a: &Tensor<S>, alpha: &Tensor<S>) -> Tensor<S> {
    let pos = relu(a);
    let neg = sub(a, &pos); // min(0, x)
    add(&pos, &bcast_mul(&neg, alpha))
}

/// Mean of row-wise Lp distances between equal-shape matrices (p = 1 or 2).
pub fn lp_row_distance_mean<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, p: u8) -> Tensor<S> {
    same_shape(a, b, "lp_row_distance");
    let d = sub(a, b);
    let per_row = match p {
        1 => rowwise_sum(&abs(&d)),
        2 => rowwise_l2(&d, 1e-12),
        _ => panic!("lp_row_distance: p={p} unsupported"),
    };
    mean_all(&per_row)
}
