//! Small dense-vector kernels shared by the scoring paths.
//!
//! Sums run over eight lanes: lane `i` accumulates coordinates `i, i + 8,
//! ...`, the lanes are folded as `(l0 + l4) + (l1 + l5) + (l2 + l6) + (l3 +
//! l7)` and any tail past a multiple of eight is added last. The SSE2 path
//! on x86_64 and the portable path follow this order exactly, so both give
//! bit-identical results. The `_xn` variants evaluate several rows against one
//! vector at once; each row's result equals the single-row kernel.

#[derive(Clone, Copy)]
enum Op {
    Dot,
    SquaredDistance,
}

#[inline(always)]
fn combine(op: Op, x: f32, y: f32) -> f32 {
    match op {
        Op::Dot => x * y,
        Op::SquaredDistance => {
            let d = x - y;
            d * d
        }
    }
}

#[inline(always)]
fn fold(lanes: &[f32; 8], tail: f32) -> f32 {
    (lanes[0] + lanes[4])
        + (lanes[1] + lanes[5])
        + (lanes[2] + lanes[6])
        + (lanes[3] + lanes[7])
        + tail
}

#[inline(always)]
fn tail(op: Op, a: &[f32], b: &[f32], from: usize) -> f32 {
    let mut t = 0.0f32;
    for (&x, &y) in a[from..].iter().zip(&b[from..]) {
        t += combine(op, x, y);
    }
    t
}

#[cfg(not(target_arch = "x86_64"))]
#[inline(always)]
fn lanes_default<const R: usize>(
    op: Op,
    rows: [&[f32]; R],
    v: &[f32],
    body: usize,
) -> [[f32; 8]; R] {
    let mut acc = [[0.0f32; 8]; R];
    let mut i = 0;
    while i < body {
        for (r, row) in rows.iter().enumerate() {
            for l in 0..8 {
                acc[r][l] += combine(op, row[i + l], v[i + l]);
            }
        }
        i += 8;
    }
    acc
}

#[cfg(target_arch = "x86_64")]
#[inline(always)]
fn lanes_default<const R: usize>(
    op: Op,
    rows: [&[f32]; R],
    v: &[f32],
    body: usize,
) -> [[f32; 8]; R] {
    assert!(body <= v.len() && rows.iter().all(|r| r.len() >= body));
    // SAFETY: SSE2 is part of the x86_64 baseline; loads stay below `body`.
    unsafe { x86::lanes_xn_sse(op, rows, v, body) }
}

#[inline(always)]
fn fold_rows<const R: usize>(
    op: Op,
    acc: &[[f32; 8]; R],
    rows: [&[f32]; R],
    v: &[f32],
    body: usize,
) -> [f32; R] {
    let mut out = [0.0f32; R];
    for r in 0..R {
        out[r] = fold(&acc[r], tail(op, rows[r], v, body));
    }
    out
}

/// Calls `f(i, out)` for every row `i` of `rows` (row-major, `dim`
/// columns), with `out[b]` the kernel value of `block[b]` against row `i`.
#[inline(always)]
fn scan_generic<const R: usize>(
    op: Op,
    block: [&[f32]; R],
    rows: &[f32],
    dim: usize,
    f: &mut impl FnMut(usize, [f32; R]),
) {
    let body = dim / 8 * 8;
    for (i, row) in rows.chunks_exact(dim).enumerate() {
        let acc = lanes_default(op, block, row, body);
        f(i, fold_rows(op, &acc, block, row, body));
    }
}

fn scan<const R: usize>(
    op: Op,
    block: [&[f32]; R],
    rows: &[f32],
    dim: usize,
    mut f: impl FnMut(usize, [f32; R]),
) {
    assert!(dim > 0 && block.iter().all(|b| b.len() == dim));
    #[cfg(target_arch = "x86_64")]
    if x86::has_avx() {
        // SAFETY: the CPU reports AVX; slice lengths are checked above.
        unsafe { x86::scan_avx(op, block, rows, dim, &mut f) };
        return;
    }
    scan_generic(op, block, rows, dim, &mut f)
}

/// [`dot`] of each block vector against every row of `rows`.
pub fn scan_dots<const R: usize>(
    block: [&[f32]; R],
    rows: &[f32],
    dim: usize,
    f: impl FnMut(usize, [f32; R]),
) {
    scan(Op::Dot, block, rows, dim, f)
}

/// Visits the rows of `rows` four at a time against `v`.
#[inline(always)]
fn quads_generic(op: Op, rows: &[f32], dim: usize, v: &[f32], f: &mut impl FnMut(usize, f32)) {
    let body = dim / 8 * 8;
    for (q, chunk) in rows.chunks_exact(4 * dim).enumerate() {
        let quad: [&[f32]; 4] = core::array::from_fn(|r| &chunk[r * dim..(r + 1) * dim]);
        let acc = lanes_default(op, quad, v, body);
        for (r, x) in fold_rows(op, &acc, quad, v, body).into_iter().enumerate() {
            f(q * 4 + r, x);
        }
    }
}

/// [`squared_distance`] from `v` to every row of `rows`.
pub fn scan_squared_distances(rows: &[f32], dim: usize, v: &[f32], mut f: impl FnMut(usize, f32)) {
    assert!(dim > 0 && v.len() == dim);
    let n = rows.len() / dim;
    let quads = n / 4;
    let head = &rows[..quads * 4 * dim];
    #[cfg(target_arch = "x86_64")]
    let done = if x86::has_avx() {
        // SAFETY: the CPU reports AVX; every row has `dim` values.
        unsafe { x86::quads_avx(Op::SquaredDistance, head, dim, v, &mut f) };
        true
    } else {
        false
    };
    #[cfg(not(target_arch = "x86_64"))]
    let done = false;
    if !done {
        quads_generic(Op::SquaredDistance, head, dim, v, &mut f);
    }
    for i in quads * 4..n {
        f(i, squared_distance(&rows[i * dim..(i + 1) * dim], v));
    }
}

#[inline(always)]
fn lanes_xn<const R: usize>(op: Op, rows: [&[f32]; R], v: &[f32], body: usize) -> [[f32; 8]; R] {
    #[cfg(target_arch = "x86_64")]
    if x86::has_avx() {
        assert!(body <= v.len() && rows.iter().all(|r| r.len() >= body));
        // SAFETY: the CPU reports AVX; loads stay below `body`.
        return unsafe { x86::lanes_xn_avx(op, rows, v, body) };
    }
    lanes_default(op, rows, v, body)
}

#[cfg(target_arch = "x86_64")]
mod x86 {
    use super::Op;
    use core::arch::x86_64::*;

    #[cfg(any(test, feature = "std"))]
    #[inline(always)]
    pub(super) fn has_avx() -> bool {
        std::is_x86_feature_detected!("avx")
    }

    #[cfg(not(any(test, feature = "std")))]
    #[inline(always)]
    pub(super) fn has_avx() -> bool {
        cfg!(target_feature = "avx")
    }

    #[inline(always)]
    unsafe fn step_sse(op: Op, x: __m128, y: __m128) -> __m128 {
        match op {
            Op::Dot => _mm_mul_ps(x, y),
            Op::SquaredDistance => {
                let d = _mm_sub_ps(x, y);
                _mm_mul_ps(d, d)
            }
        }
    }

    #[inline(always)]
    pub(super) unsafe fn lanes_xn_sse<const R: usize>(
        op: Op,
        rows: [&[f32]; R],
        v: &[f32],
        body: usize,
    ) -> [[f32; 8]; R] {
        let mut lo = [_mm_setzero_ps(); R];
        let mut hi = [_mm_setzero_ps(); R];
        let mut i = 0;
        while i < body {
            let v0 = _mm_loadu_ps(v.as_ptr().add(i));
            let v1 = _mm_loadu_ps(v.as_ptr().add(i + 4));
            for r in 0..R {
                let p = rows[r].as_ptr().add(i);
                lo[r] = _mm_add_ps(lo[r], step_sse(op, _mm_loadu_ps(p), v0));
                hi[r] = _mm_add_ps(hi[r], step_sse(op, _mm_loadu_ps(p.add(4)), v1));
            }
            i += 8;
        }
        let mut out = [[0.0f32; 8]; R];
        for r in 0..R {
            _mm_storeu_ps(out[r].as_mut_ptr(), lo[r]);
            _mm_storeu_ps(out[r].as_mut_ptr().add(4), hi[r]);
        }
        out
    }

    #[target_feature(enable = "avx")]
    pub(super) unsafe fn scan_avx<const R: usize>(
        op: Op,
        block: [&[f32]; R],
        rows: &[f32],
        dim: usize,
        f: &mut impl FnMut(usize, [f32; R]),
    ) {
        let body = dim / 8 * 8;
        for (i, row) in rows.chunks_exact(dim).enumerate() {
            let acc = lanes_avx(op, block, row, body);
            if R.is_multiple_of(4) {
                let mut out = [0.0f32; R];
                for g in (0..R).step_by(4) {
                    let mut quad = [_mm256_setzero_ps(); 4];
                    let mut tails = [0.0f32; 4];
                    for r in 0..4 {
                        quad[r] = acc[g + r];
                        tails[r] = super::tail(op, block[g + r], row, body);
                    }
                    out[g..g + 4].copy_from_slice(&fold4_avx(quad, tails));
                }
                f(i, out);
            } else {
                f(i, super::fold_rows(op, &store(acc), block, row, body));
            }
        }
    }

    #[target_feature(enable = "avx")]
    pub(super) unsafe fn quads_avx(
        op: Op,
        rows: &[f32],
        dim: usize,
        v: &[f32],
        f: &mut impl FnMut(usize, f32),
    ) {
        let body = dim / 8 * 8;
        for (q, chunk) in rows.chunks_exact(4 * dim).enumerate() {
            // no closures here: they would inherit the target feature and
            // stop the helpers they are passed to from inlining
            let (a, rest) = chunk.split_at(dim);
            let (b, rest) = rest.split_at(dim);
            let (c, d) = rest.split_at(dim);
            let quad = [a, b, c, d];
            let acc = lanes_avx(op, quad, v, body);
            let tails = [
                super::tail(op, a, v, body),
                super::tail(op, b, v, body),
                super::tail(op, c, v, body),
                super::tail(op, d, v, body),
            ];
            for (r, x) in fold4_avx(acc, tails).into_iter().enumerate() {
                f(q * 4 + r, x);
            }
        }
    }

    #[target_feature(enable = "avx")]
    #[inline]
    unsafe fn lanes_avx<const R: usize>(
        op: Op,
        rows: [&[f32]; R],
        v: &[f32],
        body: usize,
    ) -> [__m256; R] {
        let mut acc = [_mm256_setzero_ps(); R];
        let mut i = 0;
        while i < body {
            let y = _mm256_loadu_ps(v.as_ptr().add(i));
            for r in 0..R {
                let x = _mm256_loadu_ps(rows[r].as_ptr().add(i));
                let t = match op {
                    Op::Dot => _mm256_mul_ps(x, y),
                    Op::SquaredDistance => {
                        let d = _mm256_sub_ps(x, y);
                        _mm256_mul_ps(d, d)
                    }
                };
                acc[r] = _mm256_add_ps(acc[r], t);
            }
            i += 8;
        }
        acc
    }

    #[target_feature(enable = "avx")]
    #[inline]
    unsafe fn store<const R: usize>(acc: [__m256; R]) -> [[f32; 8]; R] {
        let mut out = [[0.0f32; 8]; R];
        for r in 0..R {
            _mm256_storeu_ps(out[r].as_mut_ptr(), acc[r]);
        }
        out
    }

    /// The lane fold of four accumulators at once. Lane `r` of every step
    /// adds the same operands in the same order as the scalar fold of row
    /// `r`.
    #[target_feature(enable = "avx")]
    #[inline]
    unsafe fn fold4_avx(acc: [__m256; 4], tails: [f32; 4]) -> [f32; 4] {
        // [l0 + l4, l1 + l5, l2 + l6, l3 + l7] per row
        let mut p = [_mm_setzero_ps(); 4];
        for r in 0..4 {
            p[r] = _mm_add_ps(
                _mm256_castps256_ps128(acc[r]),
                _mm256_extractf128_ps(acc[r], 1),
            );
        }
        let t0 = _mm_unpacklo_ps(p[0], p[1]);
        let t1 = _mm_unpacklo_ps(p[2], p[3]);
        let t2 = _mm_unpackhi_ps(p[0], p[1]);
        let t3 = _mm_unpackhi_ps(p[2], p[3]);
        // column j holds pair j of all four rows
        let c0 = _mm_movelh_ps(t0, t1);
        let c1 = _mm_movehl_ps(t1, t0);
        let c2 = _mm_movelh_ps(t2, t3);
        let c3 = _mm_movehl_ps(t3, t2);
        let sum = _mm_add_ps(_mm_add_ps(_mm_add_ps(c0, c1), c2), c3);
        let sum = _mm_add_ps(sum, _mm_loadu_ps(tails.as_ptr()));
        let mut out = [0.0f32; 4];
        _mm_storeu_ps(out.as_mut_ptr(), sum);
        out
    }

    #[target_feature(enable = "avx")]
    #[inline]
    pub(super) unsafe fn lanes_xn_avx<const R: usize>(
        op: Op,
        rows: [&[f32]; R],
        v: &[f32],
        body: usize,
    ) -> [[f32; 8]; R] {
        store(lanes_avx(op, rows, v, body))
    }
}

#[inline(always)]
fn reduce_xn<const R: usize>(op: Op, rows: [&[f32]; R], v: &[f32]) -> [f32; R] {
    let n = v.len();
    debug_assert!(rows.iter().all(|r| r.len() == n));
    let body = n / 8 * 8;
    let acc = lanes_xn(op, rows, v, body);
    fold_rows(op, &acc, rows, v, body)
}

#[inline(always)]
fn reduce(op: Op, a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len().min(b.len());
    let body = n / 8 * 8;
    let mut acc = [0.0f32; 8];
    let mut i = 0;
    while i < body {
        for l in 0..8 {
            acc[l] += combine(op, a[i + l], b[i + l]);
        }
        i += 8;
    }
    fold(&acc, tail(op, &a[..n], &b[..n], body))
}

#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    reduce(Op::Dot, a, b)
}

#[inline]
pub fn squared_distance(a: &[f32], b: &[f32]) -> f32 {
    reduce(Op::SquaredDistance, a, b)
}

/// [`dot`] of `R` rows against `v`.
#[inline]
pub fn dot_xn<const R: usize>(rows: [&[f32]; R], v: &[f32]) -> [f32; R] {
    reduce_xn(Op::Dot, rows, v)
}

/// [`squared_distance`] of `R` rows to `v`.
#[inline]
pub fn squared_distance_xn<const R: usize>(rows: [&[f32]; R], v: &[f32]) -> [f32; R] {
    reduce_xn(Op::SquaredDistance, rows, v)
}

/// Euclidean norm accumulated in f64.
pub fn norm(a: &[f32]) -> f64 {
    libm::sqrt(a.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>())
}

/// Cosine similarity in f64. Returns `None` when either vector has zero norm.
pub fn cosine(a: &[f32], b: &[f32]) -> Option<f64> {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return None;
    }
    let d: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum();
    Some((d / (na * nb)).clamp(-1.0, 1.0))
}

/// Writes `a / ||a||` into `out`; zero vectors are copied through unchanged.
pub fn normalize_into(a: &[f32], out: &mut [f32]) {
    let n = norm(a);
    if n > 0.0 {
        let inv = (1.0 / n) as f32;
        for (o, &x) in out.iter_mut().zip(a) {
            *o = x * inv;
        }
    } else {
        out.copy_from_slice(a);
    }
}

/// `ceil(ratio * n)` with products that land within rounding noise of an
/// integer snapped to it, so `0.1 * 30` yields 3 rather than 4.
pub fn ceil_count(ratio: f64, n: usize) -> usize {
    let x = ratio * n as f64;
    let r = libm::round(x);
    if libm::fabs(x - r) <= 1e-9 * x.max(1.0) {
        r as usize
    } else {
        libm::ceil(x) as usize
    }
}

/// Linear-interpolated percentile (`p` in [0, 100]) of an unsorted slice.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    debug_assert!(!values.is_empty());
    let mut sorted = alloc::vec::Vec::from(values);
    sorted.sort_by(f64::total_cmp);
    percentile_sorted(&sorted, p)
}

pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = (p / 100.0) * (n - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}
