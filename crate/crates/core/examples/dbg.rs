use scdual::gen;
fn main() {
    let mut rng = gen::rng_from_seed(1);
    for i in 0..200 {
        let f = gen::random_plq(&mut rng);
        let c = match f.conjugate() { Ok(c) => c, Err(e) => { println!("{i}: conj err {e}"); continue } };
        // validate by rebuilding
        let (lo, hi) = c.domain().unwrap();
        if let Err(e) = scdual::plq::PlqFunction::new(lo, hi, c.cuts().to_vec(), c.pieces().to_vec()) {
            println!("case {i}: INVALID conjugate: {e}");
            println!("input: {f:?}");
            println!("output: {c:?}");
            break;
        }
    }
    println!("scan done");
}
