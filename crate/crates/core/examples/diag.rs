use num_complex::Complex64 as C64;
use opspace_core::cmat::{cr, CMat};
use opspace_core::gamma::*;
use opspace_core::space::*;

fn main() {
    let basis = vec![CMat::unit(2, 2, 0, 0), CMat::unit(2, 2, 0, 1)];
    let v = OperatorSpaceSpec::new(2, basis, "span{E11,E12}")
        .unwrap()
        .with_u(vec![cr(1.0), C64::ZERO])
        .unwrap();
    let qopts = QuotientOpts {
        search_restarts: 6,
        gamma: GammaOpts { restarts: 5, seed: 7, max_rounds: 25, ..Default::default() },
        ..Default::default()
    };
    match quotient_vu(&v, &qopts) {
        Ok(qd) => println!("kernel dirs: {} quotient dim {}", qd.kernel_basis.len(), qd.quotient_basis.len()),
        Err(e) => println!("ERR: {e}"),
    }
}
