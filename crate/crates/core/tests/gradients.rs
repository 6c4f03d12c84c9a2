//! Finite-difference checks for every differentiable primitive (f64, tol 1e-4).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ukan_core::autodiff::{concat, grad_check, GradCheckReport};
use ukan_core::kan::{bspline_basis, kan_layer_forward, KanLayerParams, KanLayerVars, SplineSpec};
use ukan_core::loss::{bce_dice_loss, cross_entropy_loss, dice_loss, mse};
use ukan_core::nn::{
    batch_norm_eval, batch_norm_train, conv2d, depthwise_conv, layer_norm, linear, maxpool2x2, upsample_bilinear2x,
};
use ukan_core::{Result, Tensor, Var};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape.to_vec(), 1.0, &mut rng(seed))
}

/// Contract `y` with a fixed random tensor so every output element carries
/// a distinct weight.
fn probe<'t>(y: Var<'t, f64>) -> Result<Var<'t, f64>> {
    let shape = y.shape();
    let w = Tensor::randn(shape, 1.0, &mut rng(999));
    y.mul(y.tape().constant(w))?.sum()
}

#[track_caller]
fn assert_pass(name: &str, r: GradCheckReport) {
    assert!(
        r.passed,
        "{name}: max rel err {:.3e} at {:?} (analytic {:?}, numeric {:?})",
        r.max_rel_error,
        r.worst_index(),
        r.worst_index().map(|i| r.analytic[i]),
        r.worst_index().map(|i| r.numeric[i]),
    );
}

fn check(name: &str, x: &Tensor<f64>, f: impl for<'t> Fn(Var<'t, f64>) -> Result<Var<'t, f64>>) {
    let r = grad_check(|v| probe(f(v)?), x, H, TOL).unwrap();
    assert_pass(name, r);
}

#[test]
fn elementwise_unary() {
    let x = randn(&[3, 4], 1);
    check("neg", &x, |v| v.neg());
    check("scale", &x, |v| v.scale(-2.5));
    check("add_scalar", &x, |v| v.add_scalar(0.3));
    check("square", &x, |v| v.square());
    check("exp", &x, |v| v.exp());
    check("sin", &x, |v| v.sin());
    check("tanh", &x, |v| v.tanh());
    check("sigmoid", &x, |v| v.sigmoid());
    check("silu", &x, |v| v.silu());
    let pos = x.map(|v| v.abs() + 0.5);
    check("ln", &pos, |v| v.ln());
    let away = x.map(|v| if v.abs() < 0.1 { v + 0.3 } else { v });
    check("relu", &away, |v| v.relu());
}

#[test]
fn elementwise_binary_with_broadcast() {
    let x = randn(&[2, 3, 4], 2);
    let other = randn(&[3, 1], 3);
    let denom = randn(&[4], 4).map(|v| v.abs() + 1.0);
    check("add", &x, |v| v.add(v.tape().constant(other.clone())));
    check("sub", &x, |v| v.tape().constant(other.clone()).sub(v));
    check("mul", &x, |v| v.mul(v.tape().constant(other.clone())));
    check("div numerator", &x, |v| v.div(v.tape().constant(denom.clone())));
    check("div denominator", &denom, |v| v.tape().constant(x.clone()).div(v));
    check("broadcast operand", &other, |v| v.tape().constant(x.clone()).mul(v));
    check("self product", &x, |v| v.mul(v));
}

#[test]
fn reductions_and_layout() {
    let x = randn(&[2, 3, 4], 5);
    check("sum", &x, |v| v.sum());
    check("mean", &x, |v| v.mean());
    for axis in 0..3 {
        check("sum_axis", &x, move |v| v.sum_axis(axis));
    }
    check("reshape", &x, |v| v.reshape(&[4, 6]));
    check("permute", &x, |v| v.permute(&[2, 0, 1]));
    let y = randn(&[2, 2, 4], 6);
    check("concat", &x, |v| concat(&[v, v.tape().constant(y.clone()), v], 1));
}

#[test]
fn matrix_products() {
    let a = randn(&[3, 5], 7);
    let b = randn(&[5, 4], 8);
    let bt = randn(&[4, 5], 9);
    check("matmul lhs", &a, |v| v.matmul(v.tape().constant(b.clone())));
    check("matmul rhs", &b, |v| v.tape().constant(a.clone()).matmul(v));
    check("matmul_nt lhs", &a, |v| v.matmul_nt(v.tape().constant(bt.clone())));
    check("matmul_nt rhs", &bt, |v| v.tape().constant(a.clone()).matmul_nt(v));
    let w = randn(&[4, 5], 10);
    let bias = randn(&[4], 11);
    let x3 = randn(&[2, 3, 5], 12);
    check("linear x", &x3, |v| {
        let t = v.tape();
        linear(v, t.constant(w.clone()), Some(t.constant(bias.clone())))
    });
    check("linear w", &w, |v| {
        let t = v.tape();
        linear(t.constant(x3.clone()), v, Some(t.constant(bias.clone())))
    });
    check("linear b", &bias, |v| linear(v.tape().constant(x3.clone()), v.tape().constant(w.clone()), Some(v)));
}

#[test]
fn softmax_and_losses() {
    let x = randn(&[2, 3, 2, 2], 13);
    for axis in 0..4 {
        check("log_softmax", &x, move |v| v.log_softmax(axis));
    }
    let mask = Tensor::from_fn(vec![2, 1, 3, 3], |i| ((i * 7) % 3 == 0) as u8 as f64);
    let logits = randn(&[2, 1, 3, 3], 14);
    let r = |f: &dyn for<'t> Fn(Var<'t, f64>) -> Result<Var<'t, f64>>, name: &str| {
        assert_pass(name, grad_check(|v| f(v), &logits, H, TOL).unwrap());
    };
    r(&|v| v.bce_with_logits(&mask), "bce_with_logits");
    r(&|v| dice_loss(v, &mask), "dice");
    r(&|v| bce_dice_loss(v, &mask, 0.5, 1.0), "bce+dice");
    let target = randn(&[2, 1, 3, 3], 15);
    r(&|v| mse(v, &target), "mse");
    let labels = Tensor::from_fn(vec![2, 1, 2, 2], |i| (i % 3) as f64);
    assert_pass(
        "cross_entropy",
        grad_check(|v| cross_entropy_loss(v, &labels), &x, H, TOL).unwrap(),
    );
}

#[test]
fn convolution() {
    let x = randn(&[2, 4, 5, 6], 16);
    for &(stride, pad, groups, cout) in &[(1, 1, 1, 6), (2, 1, 1, 6), (1, 0, 2, 6), (2, 1, 4, 8)] {
        let w = randn(&[cout, 4 / groups, 3, 3], 17);
        let b = randn(&[cout], 18);
        check("conv2d x", &x, |v| {
            let t = v.tape();
            conv2d(v, t.constant(w.clone()), Some(t.constant(b.clone())), stride, pad, groups)
        });
        check("conv2d w", &w, |v| {
            let t = v.tape();
            conv2d(t.constant(x.clone()), v, Some(t.constant(b.clone())), stride, pad, groups)
        });
        check("conv2d b", &b, |v| {
            let t = v.tape();
            conv2d(t.constant(x.clone()), t.constant(w.clone()), Some(v), stride, pad, groups)
        });
    }
    let w1 = randn(&[3, 4, 1, 1], 19);
    check("conv2d 1x1", &x, |v| conv2d(v, v.tape().constant(w1.clone()), None, 1, 0, 1));
    let dw = randn(&[4, 1, 3, 3], 20);
    check("depthwise x", &x, |v| depthwise_conv(v, v.tape().constant(dw.clone()), None));
    check("depthwise w", &dw, |v| depthwise_conv(v.tape().constant(x.clone()), v, None));
}

#[test]
fn normalization() {
    let x = randn(&[3, 2, 3, 3], 21);
    let g = randn(&[2], 22);
    let b = randn(&[2], 23);
    fn bn<'t>(x: Var<'t, f64>, g: Var<'t, f64>, b: Var<'t, f64>) -> Result<Var<'t, f64>> {
        batch_norm_train(x, g, b, 1e-5).map(|r| r.0)
    }
    check("bn train x", &x, |v| bn(v, v.tape().constant(g.clone()), v.tape().constant(b.clone())));
    check("bn train gamma", &g, |v| bn(v.tape().constant(x.clone()), v, v.tape().constant(b.clone())));
    check("bn train beta", &b, |v| bn(v.tape().constant(x.clone()), v.tape().constant(g.clone()), v));
    let (rm, rv) = ([0.2, -0.1], [1.5, 0.7]);
    check("bn eval x", &x, |v| {
        let t = v.tape();
        batch_norm_eval(v, t.constant(g.clone()), t.constant(b.clone()), &rm, &rv, 1e-5)
    });
    check("bn eval gamma", &g, |v| {
        let t = v.tape();
        batch_norm_eval(t.constant(x.clone()), v, t.constant(b.clone()), &rm, &rv, 1e-5)
    });
    let y = randn(&[2, 3, 5], 24);
    let lg = randn(&[5], 25);
    let lb = randn(&[5], 26);
    check("ln x", &y, |v| layer_norm(v, v.tape().constant(lg.clone()), v.tape().constant(lb.clone()), 1e-6));
    check("ln gamma", &lg, |v| layer_norm(v.tape().constant(y.clone()), v, v.tape().constant(lb.clone()), 1e-6));
    check("ln beta", &lb, |v| layer_norm(v.tape().constant(y.clone()), v.tape().constant(lg.clone()), v, 1e-6));
}

#[test]
fn pooling_and_upsampling() {
    // continuous random values: no ties inside any window
    let x = randn(&[2, 3, 4, 6], 27);
    check("maxpool2x2", &x, maxpool2x2);
    check("upsample2x", &x, upsample_bilinear2x);
    let one = randn(&[1, 1, 1, 1], 28);
    check("upsample 1x1", &one, upsample_bilinear2x);
}

#[test]
fn spline_and_kan() {
    let spec = SplineSpec::default();
    let x = Tensor::uniform(vec![4, 3], -1.3, 1.3, &mut rng(29));
    check("bspline_basis", &x, |v| bspline_basis(v, &spec));
    let quad = SplineSpec::new(4, 2, -2.0, 1.0).unwrap();
    let xq = Tensor::uniform(vec![5], -2.5, 1.5, &mut rng(30));
    check("bspline_basis quadratic", &xq, |v| bspline_basis(v, &quad));

    let mut p = KanLayerParams::<f64>::init(3, 2, &spec, &mut rng(31));
    p.spline_scale = Tensor::uniform(vec![2, 3], 0.5, 1.5, &mut rng(32));
    p.spline_coeffs = Tensor::randn(vec![2, 3, 8], 0.5, &mut rng(33));
    fn vars<'t>(t: &'t ukan_core::Tape<f64>, p: &KanLayerParams<f64>) -> [Var<'t, f64>; 3] {
        [
            t.constant(p.spline_coeffs.clone()),
            t.constant(p.base_weight.clone()),
            t.constant(p.spline_scale.clone()),
        ]
    }
    fn fwd<'t>(x: Var<'t, f64>, c: Var<'t, f64>, b: Var<'t, f64>, s: Var<'t, f64>) -> Result<Var<'t, f64>> {
        let v = KanLayerVars {
            spline_coeffs: c,
            base_weight: b,
            spline_scale: s,
        };
        kan_layer_forward(x, &v, &SplineSpec::default())
    }
    check("kan x", &x, |v| {
        let [c, b, s] = vars(v.tape(), &p);
        fwd(v, c, b, s)
    });
    check("kan coeffs", &p.spline_coeffs, |v| {
        let [_, b, s] = vars(v.tape(), &p);
        fwd(v.tape().constant(x.clone()), v, b, s)
    });
    check("kan base_weight", &p.base_weight, |v| {
        let [c, _, s] = vars(v.tape(), &p);
        fwd(v.tape().constant(x.clone()), c, v, s)
    });
    check("kan spline_scale", &p.spline_scale, |v| {
        let [c, b, _] = vars(v.tape(), &p);
        fwd(v.tape().constant(x.clone()), c, b, v)
    });
}

#[test]
fn silu_derivative_matches_central_difference_closely() {
    let tape = ukan_core::Tape::<f64>::new();
    let xs = [-4.0, -1.3, -0.2, 0.0, 0.7, 2.5];
    let x = tape.leaf(Tensor::new(vec![6], xs.to_vec()).unwrap(), true);
    let g = tape.backward(x.silu().unwrap().sum().unwrap()).unwrap();
    let silu = |v: f64| v / (1.0 + (-v).exp());
    for (i, &v) in xs.iter().enumerate() {
        let fd = (silu(v + 1e-5) - silu(v - 1e-5)) / 2e-5;
        assert!((g.get(x).unwrap().data()[i] - fd).abs() <= 1e-6);
    }
}

#[test]
fn backward_is_linear_in_the_loss() {
    let x0 = randn(&[3, 4], 40);
    let grad_of = |f: &dyn for<'t> Fn(Var<'t, f64>) -> Result<Var<'t, f64>>| {
        let tape = ukan_core::Tape::new();
        let x = tape.leaf(x0.clone(), true);
        tape.backward(f(x).unwrap()).unwrap().get_or_zeros(x)
    };
    fn f(v: Var<'_, f64>) -> Result<Var<'_, f64>> {
        v.sin()?.mul(v)?.sum()
    }
    fn g(v: Var<'_, f64>) -> Result<Var<'_, f64>> {
        v.silu()?.square()?.mean()
    }
    let (a, b) = (1.7, -0.4);
    let combined = grad_of(&|v| f(v)?.scale(a)?.add(g(v)?.scale(b)?));
    let gf = grad_of(&f);
    let gg = grad_of(&g);
    let expect = gf.zip_with(&gg, |p, q| a * p + b * q).unwrap();
    assert!(combined.max_abs_diff(&expect) <= 1e-12);
}

#[test]
fn forward_and_backward_are_bit_deterministic() {
    let run = || {
        let x0 = randn(&[2, 3, 4, 4], 41);
        let w = randn(&[5, 3, 3, 3], 42);
        let tape = ukan_core::Tape::new();
        let x = tape.leaf(x0, true);
        let y = conv2d(x, tape.constant(w), None, 1, 1, 1).unwrap().silu().unwrap();
        let y = maxpool2x2(y).unwrap();
        let loss = upsample_bilinear2x(y).unwrap().square().unwrap().mean().unwrap();
        let l = loss.value().item();
        (l.to_bits(), tape.backward(loss).unwrap().get_or_zeros(x).into_data())
    };
    let (a, ga) = run();
    let (b, gb) = run();
    assert_eq!(a, b);
    assert!(ga.iter().zip(&gb).all(|(p, q)| p.to_bits() == q.to_bits()));
}
