//! Benchmark programs written in the annotated IR, each with a reference
//! implementation used as its oracle.
//!
//! Every program reads its secret inputs with `input_blinded`, computes
//! without secret-dependent branches or addresses, and releases its
//! result through a `@result` buffer.

use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Bench {
    FindMax,
    BinarySearch,
    IntSort,
    MatrixMult,
    Dnn,
}

/// Width of the second dense layer.
pub const DNN_OUT: u64 = 64;

/// Secret values are kept small so products of two never overflow.
const VALUE_RANGE: i64 = 1 << 20;

impl Bench {
    pub const ALL: [Bench; 5] = [Bench::FindMax, Bench::BinarySearch, Bench::IntSort, Bench::MatrixMult, Bench::Dnn];

    pub fn name(self) -> &'static str {
        match self {
            Bench::FindMax => "find_max",
            Bench::BinarySearch => "binary_search",
            Bench::IntSort => "int_sort",
            Bench::MatrixMult => "matrix_mult",
            Bench::Dnn => "dnn",
        }
    }

    pub fn from_name(s: &str) -> Option<Bench> {
        Bench::ALL.into_iter().find(|b| b.name() == s)
    }

    /// Array length for size parameter `n`: `2^n` elements, or a side of
    /// `2^(n/2)` for the matrix programs.
    pub fn len(self, n: u32) -> u64 {
        match self {
            Bench::MatrixMult | Bench::Dnn => 1 << (n / 2),
            _ => 1 << n,
        }
    }

    pub fn source(self, n: u32) -> String {
        let len = self.len(n);
        match self {
            Bench::FindMax => find_max(len),
            Bench::BinarySearch => binary_search(len),
            Bench::IntSort => int_sort(len),
            Bench::MatrixMult => matrix_mult(len),
            Bench::Dnn => dnn(len),
        }
    }

    /// Random secret input stream.
    pub fn secrets(self, n: u32, rng: &mut impl Rng) -> Vec<u64> {
        let len = self.len(n);
        let mut draw = |k: u64| -> Vec<u64> { (0..k).map(|_| rng.gen_range(0..VALUE_RANGE) as u64).collect() };
        match self {
            Bench::FindMax | Bench::IntSort => draw(len),
            Bench::BinarySearch => {
                let mut a = draw(len);
                a.sort_unstable();
                let key = if rng.gen_bool(0.5) { a[rng.gen_range(0..len as usize)] } else { rng.gen_range(0..VALUE_RANGE) as u64 };
                a.push(key);
                a
            }
            Bench::MatrixMult => draw(2 * len * len),
            Bench::Dnn => {
                let s = len;
                // x, w1, b1, w2, b2; weights kept tiny to bound growth.
                let mut v = draw(s);
                v.extend((0..s * s + s + DNN_OUT * s + DNN_OUT).map(|_| rng.gen_range(0..16u64)));
                v
            }
        }
    }

    /// Output of the reference implementation.
    pub fn expected(self, n: u32, secrets: &[u64]) -> Vec<u64> {
        let len = self.len(n) as usize;
        let s: Vec<i64> = secrets.iter().map(|&v| v as i64).collect();
        let out: Vec<i64> = match self {
            Bench::FindMax => vec![*s.iter().max().expect("non-empty")],
            Bench::BinarySearch => vec![s[..len].partition_point(|&x| x < s[len]) as i64],
            Bench::IntSort => {
                let mut v = s.clone();
                v.sort_unstable();
                v
            }
            Bench::MatrixMult => {
                let (a, b) = s.split_at(len * len);
                let mut c = vec![0i64; len * len];
                for i in 0..len {
                    for j in 0..len {
                        c[i * len + j] = (0..len).fold(0i64, |acc, t| acc.wrapping_add(a[i * len + t].wrapping_mul(b[t * len + j])));
                    }
                }
                c
            }
            Bench::Dnn => {
                let o = DNN_OUT as usize;
                let (x, rest) = s.split_at(len);
                let (w1, rest) = rest.split_at(len * len);
                let (b1, rest) = rest.split_at(len);
                let (w2, b2) = rest.split_at(o * len);
                let dense = |w: &[i64], b: &[i64], x: &[i64], rows: usize| -> Vec<i64> {
                    (0..rows)
                        .map(|r| x.iter().enumerate().fold(b[r], |acc, (c, &xv)| acc.wrapping_add(w[r * x.len() + c].wrapping_mul(xv))))
                        .collect()
                };
                let h = dense(w1, b1, x, len);
                dense(w2, b2, &h, o)
            }
        };
        out.into_iter().map(|v| v as u64).collect()
    }
}

fn find_max(len: u64) -> String {
    format!(
        "// Largest element of a secret array.
fn max2(@blinded int a, @blinded int b) @blinded {{
    @blinded int m;
    m = select(a > b, a, b);
    return m;
}}

fn main() {{
    int* a = bmalloc({len});
    input_blinded(a, {len});
    @blinded int best;
    best = a[0];
    for (int i = 1; i < {len}; i = i + 1)
        best = max2(best, a[i]);
    @result int r[1];
    r[0] = best;
    out(r[0]);
    free(a);
}}
"
    )
}

fn binary_search(len: u64) -> String {
    format!(
        "// Lower bound of a secret key in a secret sorted array. Each probe
// scans the whole array so the access pattern is fixed.
fn fetch(@blinded int* a, @blinded int idx) @blinded {{
    @blinded int v;
    v = 0;
    for (int j = 0; j < {len}; j = j + 1)
        v = select(j == idx, a[j], v);
    return v;
}}

fn main() {{
    int* a = bmalloc({len});
    input_blinded(a, {len});
    int* kb = bmalloc(1);
    input_blinded(kb, 1);
    @blinded int key;
    @blinded int pos;
    @blinded int probe;
    key = kb[0];
    pos = 0;
    for (int step = {half}; step > 0; step = step >> 1) {{
        probe = fetch(a, pos + step - 1);
        pos = pos + select(probe < key, step, 0);
    }}
    pos = pos + (fetch(a, pos) < key);
    @result int r[1];
    r[0] = pos;
    out(r[0]);
    free(kb);
    free(a);
}}
",
        half = len / 2
    )
}

fn int_sort(len: u64) -> String {
    format!(
        "// Bitonic sorting network; compare-swap is branch free.
fn cswap(@blinded int* a, int i, int l, int up) {{
    @blinded int x;
    @blinded int y;
    @blinded int s;
    x = a[i];
    y = a[l];
    s = (x > y) == up;
    a[i] = select(s, y, x);
    a[l] = select(s, x, y);
}}

fn main() {{
    int* a = bmalloc({len});
    input_blinded(a, {len});
    int i;
    int l;
    for (int k = 2; k <= {len}; k = k << 1)
        for (int j = k >> 1; j > 0; j = j >> 1)
            for (i = 0; i < {len}; i = i + 1) {{
                l = i ^ j;
                if (l > i)
                    cswap(a, i, l, (i & k) == 0);
            }}
    @result int r[{len}];
    for (i = 0; i < {len}; i = i + 1)
        r[i] = a[i];
    for (i = 0; i < {len}; i = i + 1)
        out(r[i]);
    free(a);
}}
"
    )
}

fn matrix_mult(s: u64) -> String {
    format!(
        "// Product of two secret {s}x{s} matrices.
fn dot(@blinded int* a, @blinded int* b, int row, int col) @blinded {{
    @blinded int acc;
    acc = 0;
    for (int t = 0; t < {s}; t = t + 1)
        acc = acc + a[row * {s} + t] * b[t * {s} + col];
    return acc;
}}

fn main() {{
    int* a = bmalloc({n});
    int* b = bmalloc({n});
    input_blinded(a, {n});
    input_blinded(b, {n});
    @result int c[{n}];
    int i;
    int j;
    for (i = 0; i < {s}; i = i + 1)
        for (j = 0; j < {s}; j = j + 1)
            c[i * {s} + j] = dot(a, b, i, j);
    for (i = 0; i < {n}; i = i + 1)
        out(c[i]);
    free(b);
    free(a);
}}
",
        n = s * s
    )
}

fn dnn(s: u64) -> String {
    format!(
        "// Two dense affine layers, {s} -> {s} -> {o}, all parameters secret.
fn dense(@blinded int* w, @blinded int* b, @blinded int* x, @blinded int* y, int rows, int cols) {{
    @blinded int acc;
    for (int r = 0; r < rows; r = r + 1) {{
        acc = b[r];
        for (int c = 0; c < cols; c = c + 1)
            acc = acc + w[r * cols + c] * x[c];
        y[r] = acc;
    }}
}}

fn main() {{
    int* x = bmalloc({s});
    int* w1 = bmalloc({s2});
    int* b1 = bmalloc({s});
    int* w2 = bmalloc({os});
    int* b2 = bmalloc({o});
    int* h = bmalloc({s});
    int* y = bmalloc({o});
    input_blinded(x, {s});
    input_blinded(w1, {s2});
    input_blinded(b1, {s});
    input_blinded(w2, {os});
    input_blinded(b2, {o});
    dense(w1, b1, x, h, {s}, {s});
    dense(w2, b2, h, y, {o}, {s});
    @result int r[{o}];
    int i;
    for (i = 0; i < {o}; i = i + 1)
        r[i] = y[i];
    for (i = 0; i < {o}; i = i + 1)
        out(r[i]);
    free(y);
    free(h);
    free(b2);
    free(w2);
    free(b1);
    free(w1);
    free(x);
}}
",
        s2 = s * s,
        o = DNN_OUT,
        os = DNN_OUT * s
    )
}
