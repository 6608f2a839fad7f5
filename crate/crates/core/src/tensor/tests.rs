use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Contracts `v` with a fixed random weight so every entry matters.
fn readout<'t>(v: Var<'t>, weight: &Matrix) -> Result<Var<'t>> {
    let w = v.tape().constant(weight.clone())?;
    v.mul(w)?.sum()
}

#[test]
fn relu_backward_blocks_negative_inputs() {
    let tape = Tape::new();
    let x = tape.param(Matrix::row_vector(&[-1.0, 2.0])).unwrap();
    let g = x.relu().unwrap().sum().unwrap().backward().unwrap();
    assert_eq!(g.wrt(x).as_slice(), &[0.0, 1.0]);
}

#[test]
fn row_softmax_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let tape = Tape::new();
    let x = tape.constant(random(&mut rng, 5, 7, -30.0, 30.0)).unwrap();
    let y = x.row_softmax().unwrap().to_matrix();
    for r in 0..5 {
        assert!((y.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = random(&mut rng, 3, 4, -1.0, 1.0);
    let b = random(&mut rng, 4, 2, -1.0, 1.0);
    let w = random(&mut rng, 3, 2, -1.0, 1.0);
    let check = grad_check(|_, p| readout(p[0].matmul(p[1])?, &w), &[a, b], 1e-5).unwrap();
    assert!(check.max_rel_error <= 1e-6, "{check:?}");
}

#[test]
fn cosine_examples() {
    let tape = Tape::new();
    let a = tape.constant(Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]])).unwrap();
    let c = cosine_matrix(a, a).unwrap().to_matrix();
    assert!((c[(0, 0)] - 1.0).abs() < 1e-7);
    assert!((c[(1, 1)] - 1.0).abs() < 1e-7);
    assert_eq!(c[(0, 1)], 0.0);

    let x = tape.constant(Matrix::row_vector(&[1.0, 1.0])).unwrap();
    let y = tape.constant(Matrix::row_vector(&[1.0, 0.0])).unwrap();
    let c = cosine_matrix(x, y).unwrap().scalar();
    assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-7);

    let zero = tape.constant(Matrix::zeros(1, 2)).unwrap();
    assert_eq!(cosine_matrix(zero, y).unwrap().scalar(), 0.0);
}

#[test]
fn cosine_with_zero_row_has_finite_gradient() {
    let tape = Tape::new();
    let a = tape.param(Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 2.0]])).unwrap();
    let b = tape.param(Matrix::from_rows(&[vec![3.0, -1.0]])).unwrap();
    let g = cosine_matrix(a, b).unwrap().sum().unwrap().backward().unwrap();
    assert!(g.wrt(a).is_finite());
    assert!(g.wrt(b).is_finite());
}

#[test]
fn grad_check_quadratic_and_constant() {
    let q = grad_check(|_, p| p[0].mul(p[0])?.sum(), &[Matrix::row_vector(&[1.0, 2.0])], 1e-5).unwrap();
    assert!((q.analytic[0] - 2.0).abs() < 1e-12 && (q.analytic[1] - 4.0).abs() < 1e-12);
    assert!(q.max_rel_error <= 1e-8);

    let c = grad_check(|t, _| t.constant(Matrix::scalar(3.0)), &[Matrix::row_vector(&[1.0, -2.0])], 1e-5).unwrap();
    assert!(c.analytic.iter().chain(&c.numeric).all(|&g| g == 0.0));
}

#[test]
fn reused_value_accumulates_both_paths() {
    let tape = Tape::new();
    let x = tape.param(Matrix::row_vector(&[1.5, -0.5])).unwrap();
    let twice = x.add(x).unwrap().sum().unwrap().backward().unwrap();
    let scaled = x.scale(2.0).unwrap().sum().unwrap().backward().unwrap();
    assert_eq!(twice.wrt(x), scaled.wrt(x));
    assert_eq!(twice.wrt(x).as_slice(), &[2.0, 2.0]);
}

#[test]
fn detached_path_contributes_nothing() {
    let tape = Tape::new();
    let x = tape.param(Matrix::row_vector(&[0.3, 0.7])).unwrap();
    let d = x.detach().unwrap();
    let y = x.mul(d).unwrap().sum().unwrap();
    let g = y.backward().unwrap();
    assert_eq!(g.wrt(x).as_slice(), &[0.3, 0.7]);
    let only_detached = d.exp().unwrap().sum().unwrap().backward().unwrap();
    assert!(only_detached.get(x).is_none());
    assert_eq!(only_detached.wrt(x).as_slice(), &[0.0, 0.0]);
}

#[test]
fn shape_errors() {
    let tape = Tape::new();
    let a = tape.constant(Matrix::zeros(2, 3)).unwrap();
    let b = tape.constant(Matrix::zeros(2, 2)).unwrap();
    assert!(matches!(a.matmul(a), Err(Error::Shape { .. })));
    assert!(matches!(a.add(b), Err(Error::Shape { .. })));
    assert!(matches!(a.row_select(&[5]), Err(Error::Shape { .. })));
    assert!(a.sum().unwrap().backward().is_ok());
    assert!(matches!(a.backward(), Err(Error::Shape { .. })));
}

#[test]
fn numerics_errors() {
    let tape = Tape::new();
    let a = tape.constant(Matrix::row_vector(&[1000.0])).unwrap();
    assert!(matches!(a.exp(), Err(Error::Numerics(_))));
    let z = tape.constant(Matrix::row_vector(&[0.0])).unwrap();
    assert!(matches!(z.log(), Err(Error::Numerics(_))));
    assert!(matches!(tape.param(Matrix::scalar(f64::NAN)), Err(Error::Numerics(_))));
}

type UnaryCase = for<'t> fn(Var<'t>, &mut ChaCha8Rng) -> Result<Var<'t>>;
type BinaryCase = for<'t> fn(Var<'t>, Var<'t>) -> Result<Var<'t>>;

/// Runs every primitive against central differences on random shapes.
#[test]
fn every_primitive_matches_finite_differences() {
    let unary: Vec<(&str, f64, f64, UnaryCase)> = vec![
        ("relu", -1.0, 1.0, |x, _| x.relu()),
        ("sigmoid", -3.0, 3.0, |x, _| x.sigmoid()),
        ("exp", -2.0, 2.0, |x, _| x.exp()),
        ("log", 0.5, 3.0, |x, _| x.log()),
        ("clamp", -1.0, 1.0, |x, _| x.clamp(-0.5, 0.5)),
        ("row_softmax", -2.0, 2.0, |x, _| x.row_softmax()),
        ("transpose", -1.0, 1.0, |x, _| x.transpose()?.transpose()),
        ("scale", -1.0, 1.0, |x, _| x.scale(-1.7)?.add_scalar(0.3)),
        ("mean", -1.0, 1.0, |x, _| x.mean()),
        ("sum", -1.0, 1.0, |x, _| x.sum()),
        ("row_select", -1.0, 1.0, |x, rng| {
            let n = x.rows();
            let idx: Vec<usize> = (0..n + 2).map(|_| rng.gen_range(0..n)).collect();
            x.row_select(&idx)
        }),
        ("element", -1.0, 1.0, |x, rng| {
            let (r, c) = x.shape();
            x.element(rng.gen_range(0..r), rng.gen_range(0..c))
        }),
        ("concat", -1.0, 1.0, |x, _| {
            let rows = x.tape().concat_rows(&[x, x.scale(2.0)?])?;
            x.tape().concat_cols(&[rows, rows.exp()?])
        }),
        ("self_cosine", 0.2, 1.5, |x, _| x.cosine(x.scale(0.5)?.add_scalar(0.1)?, COSINE_EPS)),
        ("self_sq_dist", -1.0, 1.0, |x, _| x.sq_dist(x.add_scalar(0.2)?)),
    ];
    let mut failures = Vec::new();
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (r, c) = (rng.gen_range(1..=16), rng.gen_range(1..=16));
        let (name, lo, hi, case) = &unary[seed as usize % unary.len()];
        let x = random(&mut rng, r, c, *lo, *hi);
        let case_seed = rng.gen::<u64>();
        let probe = {
            let tape = Tape::new();
            let v = tape.constant(x.clone()).unwrap();
            case(v, &mut ChaCha8Rng::seed_from_u64(case_seed)).unwrap().shape()
        };
        let w = random(&mut rng, probe.0, probe.1, -1.0, 1.0);
        let check = grad_check(
            |_, p| readout(case(p[0], &mut ChaCha8Rng::seed_from_u64(case_seed))?, &w),
            &[x],
            1e-5,
        )
        .unwrap();
        if check.max_rel_error > 1e-5 {
            failures.push((seed, *name, check.max_rel_error));
        }
    }

    let binary: Vec<(&str, BinaryCase, bool)> = vec![
        ("matmul", |a, b| a.matmul(b.transpose()?), false),
        ("add", |a, b| a.add(b), false),
        ("sub", |a, b| a.sub(b), false),
        ("mul", |a, b| a.mul(b), false),
        ("div", |a, b| a.div(b), true),
        ("cosine", |a, b| a.cosine(b, COSINE_EPS), false),
        ("sq_dist", |a, b| a.sq_dist(b), false),
    ];
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let (r, c) = (rng.gen_range(1..=16), rng.gen_range(1..=16));
        let (name, case, positive) = binary[seed as usize % binary.len()];
        let a = random(&mut rng, r, c, -1.0, 1.0);
        let b = if positive { random(&mut rng, r, c, 0.5, 2.0) } else { random(&mut rng, r, c, -1.0, 1.0) };
        let probe = {
            let tape = Tape::new();
            case(tape.constant(a.clone()).unwrap(), tape.constant(b.clone()).unwrap()).unwrap().shape()
        };
        let w = random(&mut rng, probe.0, probe.1, -1.0, 1.0);
        let check = grad_check(|_, p| readout(case(p[0], p[1])?, &w), &[a, b], 1e-5).unwrap();
        if check.max_rel_error > 1e-5 {
            failures.push((seed, name, check.max_rel_error));
        }
    }

    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let (r, c) = (rng.gen_range(1..=16), rng.gen_range(1..=16));
        let a = random(&mut rng, r, c, -1.0, 1.0);
        let row = random(&mut rng, 1, c, -1.0, 1.0);
        let col = random(&mut rng, r, 1, -1.0, 1.0);
        let w = random(&mut rng, r, c, -1.0, 1.0);
        let check = grad_check(|_, p| readout(p[0].add_row(p[1])?.mul_col(p[2])?, &w), &[a, row, col], 1e-5).unwrap();
        if check.max_rel_error > 1e-5 {
            failures.push((seed, "broadcast", check.max_rel_error));
        }
    }
    assert!(failures.is_empty(), "{failures:?}");
}
