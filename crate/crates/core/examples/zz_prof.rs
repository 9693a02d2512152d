use std::time::Instant;
use rand::{Rng, SeedableRng};
fn key(value: f64, index: usize) -> u128 {
    let bits = value.to_bits();
    let ordered = bits ^ ((((bits as i64) >> 63) as u64) >> 1) ^ (1 << 63);
    ((ordered as u128) << 64) | index as u128
}
fn main() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    for n in [1000usize, 1_000_000] {
        let v: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let m = n / 4;
        for _ in 0..3 {
            let t = Instant::now();
            let mut keys: Vec<u128> = v.iter().enumerate().map(|(i, &x)| key(x, i)).collect();
            let a = t.elapsed().as_nanos();
            keys.select_nth_unstable(m);
            let b = t.elapsed().as_nanos();
            keys[m..].select_nth_unstable(n - 2 * m);
            let c = t.elapsed().as_nanos();
            keys[..m].sort_unstable();
            keys[n - m..].sort_unstable();
            let d = t.elapsed().as_nanos();
            let rv = pods::RewardVector::new(v.clone()).unwrap();
            let t = Instant::now();
            pods::selection::max_variance_select(&rv, m).unwrap();
            let e = t.elapsed().as_nanos();
            println!("n={n} build={a} sel1={} sel2={} sorts={} full={e}", b - a, c - b, d - c);
        }
    }
}
