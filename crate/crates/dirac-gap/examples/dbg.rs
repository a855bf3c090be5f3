use std::time::Instant;
fn main() {
    let mesh = dirac_gap::kernel::MomentumMesh::geometric(1e-3, 1e3, 60).unwrap();
    for twice in [-1i64, 1, 3, 5, 7, 9, 11, 13, 0, 2, 4, 6, 8, 10, 12] {
        let j = twice as f64 / 2.0;
        let t = Instant::now();
        let f = dirac_gap::kernel::assemble_coulomb_form(j, &mesh).unwrap();
        println!("assemble j={j}: {:?} ({} x {})", t.elapsed(), f.matrix.nrows(), f.matrix.ncols());
    }
}
