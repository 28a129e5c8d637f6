//! Packed, register-blocked matrix multiply used by dense and convolution
//! layers.
//!
//! Every entry of the output is accumulated in a fixed order that depends only
//! on the matrix dimensions, never on the host or thread count, so results are
//! bit-reproducible. No fused multiply-add is emitted.

const MR: usize = 4;
const NR: usize = 16;
const KC: usize = 256;

/// Operand layout: `Normal` means the slice holds the matrix row-major,
/// `Transposed` means it holds the transpose row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Normal,
    Transposed,
}

/// `c[m×n] += op(a)[m×k] · op(b)[k×n]`, all row-major.
#[allow(clippy::too_many_arguments)]
pub fn gemm(m: usize, k: usize, n: usize, a: &[f64], op_a: Op, b: &[f64], op_b: Op, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    // Skinny shapes waste most of a packed panel; handle them directly.
    if k == 1 {
        return outer(m, n, a, b, c);
    }
    if m == 1 {
        return single_row(k, n, a, b, op_b, c);
    }
    let m_panels = m.div_ceil(MR);
    let n_panels = n.div_ceil(NR);
    let mut pa = vec![0.0; m_panels * MR * KC.min(k)];
    let mut pb = vec![0.0; n_panels * NR * KC.min(k)];

    let mut k0 = 0;
    while k0 < k {
        let kc = KC.min(k - k0);
        pack_a(a, op_a, m, k, k0, kc, &mut pa);
        pack_b(b, op_b, k, n, k0, kc, &mut pb);
        for jp in 0..n_panels {
            let bp = &pb[jp * NR * kc..(jp + 1) * NR * kc];
            for ip in 0..m_panels {
                let ap = &pa[ip * MR * kc..(ip + 1) * MR * kc];
                let acc = kernel(kc, ap, bp);
                let rows = MR.min(m - ip * MR);
                let cols = NR.min(n - jp * NR);
                for (r, acc_row) in acc.iter().enumerate().take(rows) {
                    let row = ip * MR + r;
                    let dst = &mut c[row * n + jp * NR..row * n + jp * NR + cols];
                    for (d, s) in dst.iter_mut().zip(acc_row.iter()) {
                        *d += *s;
                    }
                }
            }
        }
        k0 += kc;
    }
}

/// `c += a bᵀ` for column `a` and row `b`; both layouts coincide when k = 1.
fn outer(m: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    for (i, row) in c.chunks_exact_mut(n).enumerate().take(m) {
        let ai = a[i];
        for (d, &bj) in row.iter_mut().zip(b) {
            *d += ai * bj;
        }
    }
}

const LANES: usize = 8;

fn single_row(k: usize, n: usize, a: &[f64], b: &[f64], op_b: Op, c: &mut [f64]) {
    match op_b {
        Op::Normal => {
            let mut acc = vec![0.0; n];
            for (p, row) in b.chunks_exact(n).enumerate() {
                let ap = a[p];
                for (s, &v) in acc.iter_mut().zip(row) {
                    *s += ap * v;
                }
            }
            for (d, s) in c.iter_mut().zip(acc) {
                *d += s;
            }
        }
        Op::Transposed => {
            for (j, d) in c.iter_mut().enumerate() {
                *d += dot(a, &b[j * k..(j + 1) * k]);
            }
        }
    }
}

/// Dot product with a fixed lane-wise summation order.
fn dot(x: &[f64], y: &[f64]) -> f64 {
    let mut lanes = [0.0; LANES];
    let (xc, yc) = (x.chunks_exact(LANES), y.chunks_exact(LANES));
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (a, b) in xc.zip(yc) {
        for l in 0..LANES {
            lanes[l] += a[l] * b[l];
        }
    }
    let mut s = lanes.iter().sum::<f64>();
    for (a, b) in xr.iter().zip(yr) {
        s += a * b;
    }
    s
}

#[inline(always)]
fn kernel(kc: usize, ap: &[f64], bp: &[f64]) -> [[f64; NR]; MR] {
    let mut acc = [[0.0f64; NR]; MR];
    for (a, b) in ap.chunks_exact(MR).zip(bp.chunks_exact(NR)).take(kc) {
        for r in 0..MR {
            let ar = a[r];
            for c in 0..NR {
                acc[r][c] += ar * b[c];
            }
        }
    }
    acc
}

fn pack_a(a: &[f64], op: Op, m: usize, k: usize, k0: usize, kc: usize, out: &mut [f64]) {
    let m_panels = m.div_ceil(MR);
    for ip in 0..m_panels {
        let panel = &mut out[ip * MR * kc..(ip + 1) * MR * kc];
        for kk in 0..kc {
            for r in 0..MR {
                let i = ip * MR + r;
                panel[kk * MR + r] = if i < m {
                    match op {
                        Op::Normal => a[i * k + k0 + kk],
                        Op::Transposed => a[(k0 + kk) * m + i],
                    }
                } else {
                    0.0
                };
            }
        }
    }
}

fn pack_b(b: &[f64], op: Op, k: usize, n: usize, k0: usize, kc: usize, out: &mut [f64]) {
    let n_panels = n.div_ceil(NR);
    for jp in 0..n_panels {
        let panel = &mut out[jp * NR * kc..(jp + 1) * NR * kc];
        let cols = NR.min(n - jp * NR);
        for kk in 0..kc {
            let dst = &mut panel[kk * NR..kk * NR + NR];
            match op {
                Op::Normal => {
                    let src = &b[(k0 + kk) * n + jp * NR..(k0 + kk) * n + jp * NR + cols];
                    dst[..cols].copy_from_slice(src);
                }
                Op::Transposed => {
                    for (c, d) in dst.iter_mut().enumerate().take(cols) {
                        *d = b[(jp * NR + c) * k + k0 + kk];
                    }
                }
            }
            for d in dst.iter_mut().skip(cols) {
                *d = 0.0;
            }
        }
    }
    let _ = k;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], op_a: Op, b: &[f64], op_b: Op) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    let av = match op_a {
                        Op::Normal => a[i * k + p],
                        Op::Transposed => a[p * m + i],
                    };
                    let bv = match op_b {
                        Op::Normal => b[p * n + j],
                        Op::Transposed => b[j * k + p],
                    };
                    s += av * bv;
                }
                c[i * n + j] = s;
            }
        }
        c
    }

    #[test]
    fn matches_naive_for_ragged_shapes_and_all_layouts() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(m, k, n) in &[(1, 1, 1), (1, 37, 9), (1, 300, 5), (6, 1, 11), (3, 5, 7), (4, 8, 8), (9, 300, 17), (33, 600, 5)] {
            let a: Vec<f64> = (0..m * k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..k * n).map(|_| rng.random_range(-1.0..1.0)).collect();
            for op_a in [Op::Normal, Op::Transposed] {
                for op_b in [Op::Normal, Op::Transposed] {
                    let expect = naive(m, k, n, &a, op_a, &b, op_b);
                    let mut c = vec![0.0; m * n];
                    gemm(m, k, n, &a, op_a, &b, op_b, &mut c);
                    for (x, y) in c.iter().zip(&expect) {
                        assert!((x - y).abs() < 1e-10, "{m}x{k}x{n}: {x} vs {y}");
                    }
                }
            }
        }
    }

    #[test]
    fn accumulates_into_existing_output() {
        let a = [1.0, 2.0];
        let b = [3.0, 4.0];
        let mut c = [10.0];
        gemm(1, 2, 1, &a, Op::Normal, &b, Op::Normal, &mut c);
        assert_eq!(c[0], 21.0);
    }
}
