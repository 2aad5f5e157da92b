//! Loss selection and parameters.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::tensor::{Result, Tape, Var, PROB_CLAMP};

/// Balance factor and focusing exponent of the focal loss. The vessel class
/// is the minority, so alpha defaults above one half.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub alpha: f64,
    pub omega: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        FocalParams { alpha: 0.75, omega: 2.0 }
    }
}

impl FocalParams {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(format!("focal alpha must lie in (0,1), got {}", self.alpha));
        }
        if self.omega < 0.0 {
            return Err(format!("focal omega must be >= 0, got {}", self.omega));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Focal(FocalParams),
    Dice,
    Jaccard,
}

impl Default for LossKind {
    fn default() -> Self {
        LossKind::Focal(FocalParams::default())
    }
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Focal(_) => "focal",
            LossKind::Dice => "dice",
            LossKind::Jaccard => "jaccard",
        }
    }
}

/// Record the selected loss between prediction probabilities and targets.
pub fn apply_loss<T: Scalar>(
    tape: &mut Tape<T>,
    kind: LossKind,
    pred: Var,
    target: Var,
) -> Result<Var> {
    match kind {
        LossKind::Focal(p) => tape.focal_loss(pred, target, p.alpha, p.omega),
        LossKind::Dice => tape.dice_loss(pred, target),
        LossKind::Jaccard => tape.jaccard_loss(pred, target),
    }
}

/// Reference binary cross-entropy with the same clamping and per-pixel
/// averaging as the focal loss; the omega = 0, alpha = 0.5 identity check
/// compares against half of this.
pub fn bce_mean<T: Scalar>(pred: &[T], target: &[T]) -> f64 {
    let lo = PROB_CLAMP;
    let hi = 1.0 - PROB_CLAMP;
    let mut acc = 0.0f64;
    for (&p0, &y) in pred.iter().zip(target) {
        let p = p0.as_f64().clamp(lo, hi);
        let y = y.as_f64();
        acc -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    acc / pred.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_diff_grads, max_rel_err, FD_STEP};
    use crate::rng::{rng_for, Rng};
    use crate::tensor::Tensor;
    use rand::Rng as _;

    fn rand_probs(n: usize, rng: &mut Rng) -> Tensor<f64> {
        Tensor::new(vec![n], (0..n).map(|_| rng.random_range(0.02..0.98)).collect()).unwrap()
    }

    fn rand_mask(n: usize, rng: &mut Rng) -> Tensor<f64> {
        Tensor::new(vec![n], (0..n).map(|_| f64::from(rng.random::<bool>() as u8)).collect()).unwrap()
    }

    fn eval_loss(kind: LossKind, pred: &Tensor<f64>, target: &Tensor<f64>) -> f64 {
        let mut tape = Tape::new();
        let pv = tape.leaf(pred.clone(), false);
        let tv = tape.leaf(target.clone(), false);
        let l = apply_loss(&mut tape, kind, pv, tv).unwrap();
        tape.value(l).item()
    }

    #[test]
    fn focal_with_omega_zero_is_half_bce() {
        let mut rng = rng_for(2, "focal0");
        let pred = rand_probs(64, &mut rng);
        let target = rand_mask(64, &mut rng);
        let focal = eval_loss(
            LossKind::Focal(FocalParams { alpha: 0.5, omega: 0.0 }),
            &pred,
            &target,
        );
        let bce = bce_mean(pred.data(), target.data());
        assert!((focal - 0.5 * bce).abs() < 1e-9, "{} vs {}", focal, 0.5 * bce);
    }

    #[test]
    fn focal_hand_evaluated_single_pixel() {
        // y=1, p=0.5, alpha=0.75, omega=2: 0.75 * 0.25 * ln 2
        let pred = Tensor::new(vec![1], vec![0.5]).unwrap();
        let target = Tensor::new(vec![1], vec![1.0]).unwrap();
        let loss =
            eval_loss(LossKind::Focal(FocalParams { alpha: 0.75, omega: 2.0 }), &pred, &target);
        let expected = 0.75 * 0.25 * 2f64.ln();
        assert!((loss - expected).abs() < 1e-9, "{} vs {}", loss, expected);
        assert!((expected - 0.1299651).abs() < 1e-7);
    }

    #[test]
    fn focal_perfect_confident_prediction_is_tiny() {
        let pred = Tensor::new(vec![2], vec![1.0, 0.0]).unwrap(); // clamped inside
        let target = Tensor::new(vec![2], vec![1.0, 0.0]).unwrap();
        let loss = eval_loss(LossKind::Focal(FocalParams::default()), &pred, &target);
        assert!(loss <= 0.75 * 1e-6, "loss {}", loss);
    }

    #[test]
    fn dice_and_jaccard_endpoints() {
        let target = Tensor::new(vec![4], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let same = eval_loss(LossKind::Dice, &target, &target);
        assert!(same < 0.2, "binary self-dice near zero, got {}", same);
        let inverted = Tensor::new(vec![4], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let flipped = eval_loss(LossKind::Dice, &inverted, &target);
        assert!(flipped > 0.7, "anti-prediction dice near one, got {}", flipped);
        assert!(eval_loss(LossKind::Jaccard, &target, &target) < 0.3);
    }

    #[test]
    fn dice_coefficient_dominates_jaccard() {
        let mut rng = rng_for(9, "dj");
        let pred = rand_probs(128, &mut rng);
        let target = rand_mask(128, &mut rng);
        let dice = eval_loss(LossKind::Dice, &pred, &target);
        let jaccard = eval_loss(LossKind::Jaccard, &pred, &target);
        assert!(1.0 - dice >= 1.0 - jaccard, "dice {} jaccard {}", dice, jaccard);
    }

    #[test]
    fn empty_input_is_error() {
        let mut tape = Tape::<f64>::new();
        let p = tape.leaf(Tensor::zeros(vec![0]), false);
        let t = tape.leaf(Tensor::zeros(vec![0]), false);
        assert!(apply_loss(&mut tape, LossKind::default(), p, t).is_err());
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = rng_for(21, "lossgrad");
        for kind in [
            LossKind::Focal(FocalParams { alpha: 0.75, omega: 2.0 }),
            LossKind::Focal(FocalParams { alpha: 0.25, omega: 0.0 }),
            LossKind::Focal(FocalParams { alpha: 0.5, omega: 1.0 }),
            LossKind::Dice,
            LossKind::Jaccard,
        ] {
            let params = vec![rand_probs(32, &mut rng)];
            let target = rand_mask(32, &mut rng);
            let run = |ps: &[Tensor<f64>]| -> (Tape<f64>, Var, Var) {
                let mut tape = Tape::new();
                let pv = tape.leaf(ps[0].clone(), true);
                let tv = tape.leaf(target.clone(), false);
                let l = apply_loss(&mut tape, kind, pv, tv).unwrap();
                (tape, pv, l)
            };
            let (mut tape, pv, loss) = run(&params);
            tape.backward(loss).unwrap();
            let numeric = finite_diff_grads(
                &params,
                |ps| {
                    let (t, _, l) = run(ps);
                    t.value(l).item()
                },
                FD_STEP,
            );
            let err = max_rel_err(tape.grad(pv).unwrap(), &numeric[0], 1e-6);
            assert!(err < 1e-4, "{:?}: rel err {}", kind, err);
        }
    }

    #[test]
    fn masked_ce_losses_match_finite_differences() {
        let mut rng = rng_for(22, "cegrad");
        let logits = Tensor::new(vec![2, 8], (0..16).map(|_| rng.random_range(-2.0..2.0)).collect())
            .unwrap();
        let targets: Vec<usize> = (0..4).map(|_| rng.random_range(0..4)).collect();
        let mask = vec![true, true, false, true];
        let params = vec![logits];
        let run = |ps: &[Tensor<f64>]| -> (Tape<f64>, Var, Var) {
            let mut tape = Tape::new();
            let lv = tape.leaf(ps[0].clone(), true);
            let l = tape.masked_categorical_ce(lv, 4, &targets, &mask).unwrap();
            (tape, lv, l)
        };
        let (mut tape, lv, loss) = run(&params);
        tape.backward(loss).unwrap();
        let numeric = finite_diff_grads(
            &params,
            |ps| {
                let (t, _, l) = run(ps);
                t.value(l).item()
            },
            FD_STEP,
        );
        assert!(max_rel_err(tape.grad(lv).unwrap(), &numeric[0], 1e-6) < 1e-4);
        // masked positions receive exactly zero gradient
        let g = tape.grad(lv).unwrap().data();
        assert!(g[8..12].iter().all(|&v| v == 0.0));

        let blogits =
            Tensor::new(vec![1, 6], (0..6).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let btargets: Vec<bool> = (0..6).map(|_| rng.random()).collect();
        let bmask = vec![true, false, true, true, true, false];
        let bparams = vec![blogits];
        let brun = |ps: &[Tensor<f64>]| -> (Tape<f64>, Var, Var) {
            let mut tape = Tape::new();
            let lv = tape.leaf(ps[0].clone(), true);
            let l = tape.masked_binary_ce(lv, &btargets, &bmask).unwrap();
            (tape, lv, l)
        };
        let (mut tape, lv, loss) = brun(&bparams);
        tape.backward(loss).unwrap();
        let numeric = finite_diff_grads(
            &bparams,
            |ps| {
                let (t, _, l) = brun(ps);
                t.value(l).item()
            },
            FD_STEP,
        );
        assert!(max_rel_err(tape.grad(lv).unwrap(), &numeric[0], 1e-6) < 1e-4);
        let g = tape.grad(lv).unwrap().data();
        assert_eq!(g[1], 0.0);
        assert_eq!(g[5], 0.0);
    }
}
