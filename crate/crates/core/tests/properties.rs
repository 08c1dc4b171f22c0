use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use smallnoise::expr::{parse, BinOp, Expr, Func};
use smallnoise::model::{truncate, CoefficientField, Field};
use smallnoise::paths::{euler_maruyama, solve_ode, BrownianDriver, OdeMethod, TimeGrid};

const DIM: usize = 3;

fn leaf() -> impl Strategy<Value = Expr> {
    prop_oneof![
        (-1e3f64..1e3).prop_map(Expr::Num),
        Just(Expr::Time),
        (0..DIM).prop_map(Expr::Var),
        (1u32..4).prop_map(|k| Expr::Num(k as f64)),
    ]
}

fn tree() -> impl Strategy<Value = Expr> {
    leaf().prop_recursive(6, 48, 2, |inner| {
        let binop = prop_oneof![Just(BinOp::Add), Just(BinOp::Sub), Just(BinOp::Mul), Just(BinOp::Div), Just(BinOp::Pow)];
        let unary = prop_oneof![
            Just(Func::Sin),
            Just(Func::Cos),
            Just(Func::Exp),
            Just(Func::Tanh),
            Just(Func::Abs),
            Just(Func::Sqrt),
            Just(Func::Sign)
        ];
        prop_oneof![
            inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
            (binop, inner.clone(), inner.clone()).prop_map(|(op, a, b)| Expr::Bin(op, Box::new(a), Box::new(b))),
            (unary, inner.clone()).prop_map(|(f, a)| Expr::Call(f, vec![a])),
            (prop_oneof![Just(Func::Min), Just(Func::Max)], inner.clone(), inner)
                .prop_map(|(f, a, b)| Expr::Call(f, vec![a, b])),
        ]
    })
}

fn same(a: &Result<f64, smallnoise::expr::EvalError>, b: &Result<f64, smallnoise::expr::EvalError>) -> bool {
    match (a, b) {
        (Ok(u), Ok(v)) => u.to_bits() == v.to_bits() || (u.is_nan() && v.is_nan()),
        (Err(_), Err(_)) => true,
        _ => false,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn printed_expressions_reparse_and_evaluate_identically(e in tree(), seed in any::<u64>()) {
        let printed = e.to_string();
        let back = parse(&printed, DIM).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..1000 {
            let t = rng.random_range(0.0..5.0);
            let x: Vec<f64> = (0..DIM).map(|_| rng.random_range(-3.0..3.0)).collect();
            prop_assert!(same(&e.eval(t, &x), &back.eval(t, &x)), "{printed}");
        }
    }

    #[test]
    fn parser_never_panics_on_text(s in "\\PC{0,64}") {
        let _ = parse(&s, 2);
    }

    #[test]
    fn parser_never_panics_on_grammar_soup(s in "[-+*/^(),. 0-9a-z]{0,48}") {
        let _ = parse(&s, 2);
    }

    #[test]
    fn evaluation_is_repeatable(e in tree(), t in 0.0f64..2.0, x0 in -2.0f64..2.0) {
        let x = [x0, -x0, 0.5];
        prop_assert!(same(&e.eval(t, &x), &e.eval(t, &x)));
    }

    #[test]
    fn refinement_sums_exactly(seed in any::<u64>(), stream in any::<u64>(), n in 1usize..40, l in 1usize..3) {
        let coarse = BrownianDriver::new(seed, stream, l, TimeGrid::new(1.0, n).unwrap()).unwrap();
        let c = coarse.increment_quanta();
        let f = coarse.refined().increment_quanta();
        for k in 0..n {
            for j in 0..l {
                prop_assert_eq!(f[2 * k * l + j] + f[(2 * k + 1) * l + j], c[k * l + j]);
            }
        }
    }

    #[test]
    fn zero_noise_euler_equals_ode(seed in any::<u64>(), x0 in -3.0f64..3.0, n in 1usize..200) {
        let f = CoefficientField::new(
            "f",
            1,
            1,
            1.0,
            Arc::new(|t, x, o| o[0] = -x[0].powi(3) + t.sin() + 0.3 * x[0]),
            Arc::new(|_, x, o| o[0] = 1.0 + x[0].abs()),
        ).unwrap();
        let grid = TimeGrid::new(1.0, n).unwrap();
        let d = BrownianDriver::new(seed, 0, 1, grid).unwrap();
        let sde = euler_maruyama(&f, &[x0], &grid, 0.0, &d).unwrap();
        let ode = solve_ode(&f, &[x0], &grid, OdeMethod::Euler);
        match ode {
            Ok(ode) => {
                let a: Vec<u64> = sde.values.iter().map(|v| v.to_bits()).collect();
                let b: Vec<u64> = ode.values.iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(a, b);
            }
            Err(_) => prop_assert!(sde.blew_up()),
        }
    }

    #[test]
    fn truncation_is_consistent_inside_the_ball(n in 0.5f64..4.0, extra in 0.0f64..4.0, u in -1.0f64..1.0, v in -1.0f64..1.0, t in 0.0f64..1.0) {
        let f = CoefficientField::new(
            "g",
            2,
            1,
            1.0,
            Arc::new(|t, x, o| { o[0] = -x[0].powi(3) + x[1] * t; o[1] = x[0] * x[1]; }),
            Arc::new(|_, x, o| { o[0] = x[1]; o[1] = 1.0; }),
        ).unwrap();
        let scale = n / (u * u + v * v).sqrt().max(1.0);
        let x = [u * scale, v * scale];
        let a = truncate(&f, n).unwrap();
        let b = truncate(&f, n + extra).unwrap();
        let (mut p, mut q, mut r) = ([0.0; 2], [0.0; 2], [0.0; 2]);
        a.drift(t, &x, &mut p);
        b.drift(t, &x, &mut q);
        f.drift(t, &x, &mut r);
        if (x[0] * x[0] + x[1] * x[1]).sqrt() <= n {
            prop_assert_eq!(p.map(f64::to_bits), r.map(f64::to_bits));
            prop_assert_eq!(q.map(f64::to_bits), r.map(f64::to_bits));
        }
    }
}

#[test]
fn parser_survives_random_bytes() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20_000 {
        let len = rng.random_range(0..40);
        let bytes: Vec<u8> = (0..len).map(|_| rng.random()).collect();
        let _ = parse(&String::from_utf8_lossy(&bytes), 3);
    }
}
