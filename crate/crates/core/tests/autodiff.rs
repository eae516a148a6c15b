use iamseg_core::tensor::{central_difference, gradient_check};
use iamseg_core::{Error, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

fn rand(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::uniform(shape, 1.0, &mut rng)
}

/// Weighted sum so that every output coordinate carries a distinct gradient.
fn weighted_sum(tape: &mut Tape, y: Var) -> iamseg_core::Result<Var> {
    let n = tape.value(y).len();
    let w = Tensor::from_fn(tape.shape(y), |i| 0.3 + (i as f64 * 0.71).sin() / n.max(1) as f64 * 3.0);
    let w = tape.constant(w);
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

fn check(name: &str, inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> iamseg_core::Result<Var>) {
    let err = gradient_check(
        |t: &mut Tape, v: &[Var]| {
            let y = f(t, v)?;
            weighted_sum(t, y)
        },
        inputs,
        H,
    )
    .unwrap();
    assert!(err <= 1e-5, "{name}: relative error {err}");
}

#[test]
fn matmul_sum_gradient_matches_finite_differences() {
    let a = rand(&[5, 7], 1);
    let b = rand(&[7, 3], 2);
    let err = gradient_check(
        |t: &mut Tape, v: &[Var]| {
            let y = t.matmul(v[0], v[1])?;
            Ok(t.sum(y))
        },
        &[a, b],
        H,
    )
    .unwrap();
    assert!(err <= 1e-6, "{err}");
}

#[test]
fn softmax_rows_gradient_and_row_sums() {
    let m = rand(&[4, 4], 3);
    let mut tape = Tape::new();
    let x = tape.constant(m.clone());
    let s = tape.softmax_rows(x, 0.7).unwrap();
    for row in tape.value(s).data().chunks(4) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
    let err = gradient_check(
        |t: &mut Tape, v: &[Var]| {
            let y = t.softmax_rows(v[0], 0.7)?;
            weighted_sum(t, y)
        },
        &[m],
        H,
    )
    .unwrap();
    assert!(err <= 1e-6, "{err}");
}

#[test]
fn sum_of_squares_is_exact() {
    let x = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
    let f = |t: &mut Tape, v: &[Var]| {
        let sq = t.mul(v[0], v[0])?;
        Ok(t.sum(sq))
    };
    let mut tape = Tape::new();
    let v = tape.param(x.clone());
    let out = f(&mut tape, &[v]).unwrap();
    let g = tape.backward(out).unwrap();
    assert_eq!(g.get(v).unwrap().data(), &[2.0, 4.0]);
    assert!(gradient_check(f, &[x], H).unwrap() <= 1e-8);
}

#[test]
fn gradient_check_rejects_vector_output_and_bad_step() {
    let x = rand(&[3], 4);
    let r = gradient_check(|t: &mut Tape, v: &[Var]| Ok(t.relu(v[0])), &[x.clone()], H);
    assert!(matches!(r, Err(Error::Contract(_))));
    let r = gradient_check(|t: &mut Tape, v: &[Var]| Ok(t.sum(v[0])), &[x], 1e-1);
    assert!(matches!(r, Err(Error::Contract(_))));
}

#[test]
fn every_primitive_matches_central_differences() {
    check("conv1x1", &[rand(&[4, 6], 10), rand(&[2, 4], 11), rand(&[2], 12)], |t, v| {
        t.conv1x1(v[0], v[1], v[2])
    });
    check(
        "conv2d",
        &[rand(&[2, 5, 6], 13), rand(&[3, 2, 3, 3], 14), rand(&[3], 15)],
        |t, v| t.conv2d(v[0], v[1], v[2], 2, 1),
    );
    check("relu", &[rand(&[3, 4], 16)], |t, v| Ok(t.relu(v[0])));
    check("sigmoid", &[rand(&[3, 4], 17)], |t, v| Ok(t.sigmoid(v[0])));
    check("softplus", &[rand(&[3, 4], 18)], |t, v| Ok(t.softplus(v[0])));
    check("log", &[rand(&[5], 19).map(|x| x.abs() + 0.5)], |t, v| t.log(v[0]));
    check("abs", &[rand(&[6], 20)], |t, v| Ok(t.abs(v[0])));
    check("log_softmax", &[rand(&[3, 5], 21)], |t, v| t.log_softmax_rows(v[0]));
    check("concat0", &[rand(&[2, 3], 22), rand(&[1, 3], 23)], |t, v| t.concat(&[v[0], v[1]], 0));
    check("concat1", &[rand(&[2, 3], 24), rand(&[2, 2], 25)], |t, v| t.concat(&[v[0], v[1]], 1));
    check("slice", &[rand(&[3, 5, 2], 26)], |t, v| t.slice(v[0], 1, 1, 3));
    check("transpose", &[rand(&[3, 5], 27)], |t, v| t.transpose(v[0]));
    check("reshape", &[rand(&[3, 4], 28)], |t, v| t.reshape(v[0], &[2, 6]));
    check("gap", &[rand(&[3, 2, 4], 29)], |t, v| t.global_avg_pool(v[0]));
    check("add", &[rand(&[4], 30), rand(&[4], 31)], |t, v| t.add(v[0], v[1]));
    check("sub", &[rand(&[4], 32), rand(&[4], 33)], |t, v| t.sub(v[0], v[1]));
    check("mul", &[rand(&[4], 34), rand(&[4], 35)], |t, v| t.mul(v[0], v[1]));
    check("div", &[rand(&[4], 36), rand(&[4], 37).map(|x| x + 2.0)], |t, v| t.div(v[0], v[1]));
    check("min", &[rand(&[6], 38), rand(&[6], 39)], |t, v| t.minimum(v[0], v[1]));
    check("max", &[rand(&[6], 40), rand(&[6], 41)], |t, v| t.maximum(v[0], v[1]));
    check("scale", &[rand(&[4], 42)], |t, v| Ok(t.scale(v[0], -1.7)));
    check("add_scalar", &[rand(&[4], 43)], |t, v| Ok(t.add_scalar(v[0], 0.3)));
    check("mean", &[rand(&[2, 3], 44)], |t, v| Ok(t.mean(v[0])));
    check("mul_channel", &[rand(&[3, 2, 2], 45), rand(&[3], 46)], |t, v| t.mul_channel(v[0], v[1]));
    check("add_bias", &[rand(&[3, 4], 47), rand(&[4], 48)], |t, v| t.add_bias(v[0], v[1]));
    check("gather", &[rand(&[4, 3], 49)], |t, v| t.gather_rows(v[0], &[2, 0, 2]));
    check("resize", &[rand(&[2, 3, 4], 50)], |t, v| t.resize_bilinear(v[0], 7, 5));
}

#[test]
fn unused_leaves_get_zero_gradients() {
    let mut tape = Tape::new();
    let a = tape.param(rand(&[2, 2], 60));
    let unused = tape.param(rand(&[3], 61));
    let s = tape.sum(a);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(unused).unwrap(), &Tensor::zeros(&[3]));
    assert_eq!(g.get(a).unwrap(), &Tensor::ones(&[2, 2]));
}

#[test]
fn backward_requires_scalar_output() {
    let mut tape = Tape::new();
    let a = tape.param(rand(&[2, 2], 62));
    assert!(tape.backward(a).is_err());
}

#[test]
fn central_difference_of_linear_function_is_its_slope() {
    let x = rand(&[3], 63);
    let g = central_difference(
        |t: &mut Tape, v: &[Var]| {
            let s = t.scale(v[0], 2.5);
            Ok(t.sum(s))
        },
        &[x],
        H,
    )
    .unwrap();
    for v in g[0].data() {
        assert!((v - 2.5).abs() < 1e-9);
    }
}
