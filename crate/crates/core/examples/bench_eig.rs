use vemdd::linalg::*;
fn main() {
    let n = 1100;
    let mut state = 42u64;
    let mut next = move || { state ^= state << 13; state ^= state >> 7; state ^= state << 17; (state as f64 / u64::MAX as f64) - 0.5 };
    let mut a = DenseSymMatrix::zeros(n);
    let mut m = DenseSymMatrix::zeros(n);
    for i in 0..n { for j in 0..=i {
        let v = next(); a.set(i,j,v); a.set(j,i,v);
        let w = next()*0.1; m.set(i,j,w); m.set(j,i,w);
    }}
    for i in 0..n { a.add(i,i,50.0); m.add(i,i,2.0); }
    let t0 = std::time::Instant::now();
    let g = dense_generalized_eig(&a, &m, 40).unwrap();
    println!("n={} count=40: {:?}, lambda0={:.6}, lambda39={:.6}", n, t0.elapsed(), g.eigenvalues[0], g.eigenvalues[39]);
    let t1 = std::time::Instant::now();
    let vals = sym_eigenvalues(&a).unwrap();
    println!("eigenvalues-only: {:?} (lo={:.4}, hi={:.4})", t1.elapsed(), vals[0], vals[n-1]);
}
