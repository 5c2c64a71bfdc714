use magan_core::nets::{init_emulator, InferSession, NetConfig};
use magan_core::rng::{stream_rng, Stream};
use std::time::Instant;

fn main() {
    let cfg = NetConfig::default();
    let enet = init_emulator(&cfg, 4, &mut stream_rng(0, Stream::Init));
    let batch = 64;
    let mut s = InferSession::emulator(&enet, batch).unwrap();
    let rows = vec![0.3f32; batch * 4];
    // warm
    s.forward(&enet, &rows).unwrap();
    let t = Instant::now();
    let reps = 20;
    for _ in 0..reps {
        s.forward(&enet, &rows).unwrap();
    }
    println!("emulator fwd batch64: {:.1} ms", t.elapsed().as_secs_f64() * 1e3 / reps as f64);

    // raw GEMM throughput at conv1 shape, per-image and batched
    let (m, k, n) = (196usize, 1600usize, 32usize);
    let a = vec![0.5f32; m * k * batch];
    let b = vec![0.5f32; k * n];
    let mut c = vec![0.0f32; m * n * batch];
    let t = Instant::now();
    for _ in 0..reps {
        for i in 0..batch {
            unsafe {
                matrixmultiply::sgemm(m, k, n, 1.0, a[i*m*k..].as_ptr(), k as isize, 1, b.as_ptr(), 1, k as isize, 0.0, c[i*m*n..].as_mut_ptr(), 1, m as isize);
            }
        }
    }
    let per = t.elapsed().as_secs_f64() / reps as f64;
    println!("64 x sgemm(196x1600x32): {:.1} ms  ({:.1} GFLOP/s)", per * 1e3, 2.0 * (m*k*n*batch) as f64 / per / 1e9);
    let t = Instant::now();
    for _ in 0..reps {
        unsafe {
            matrixmultiply::sgemm(m*batch, k, n, 1.0, a.as_ptr(), k as isize, 1, b.as_ptr(), 1, k as isize, 0.0, c.as_mut_ptr(), 1, (m*batch) as isize);
        }
    }
    let per = t.elapsed().as_secs_f64() / reps as f64;
    println!("1 x sgemm(12544x1600x32): {:.1} ms  ({:.1} GFLOP/s)", per * 1e3, 2.0 * (m*k*n*batch) as f64 / per / 1e9);
}
