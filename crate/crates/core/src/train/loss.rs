use std::fmt;
use std::str::FromStr;

use crate::imaging::sobel_on_tape;
use crate::tensor::{shape_err, Element, Tape, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    L1,
    L1PlusEdge,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::L1 => "l1",
            LossKind::L1PlusEdge => "l1_plus_edge",
        })
    }
}

impl FromStr for LossKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "l1" => Ok(LossKind::L1),
            "l1_plus_edge" => Ok(LossKind::L1PlusEdge),
            _ => Err(format!("unknown loss `{s}` (expected l1 or l1_plus_edge)")),
        }
    }
}

fn check_shapes<T: Element>(tape: &Tape<T>, op: &'static str, pred: Var, target: Var) -> Result<(), TensorError> {
    let (a, b) = (tape.shape(pred), tape.shape(target));
    if a != b {
        return Err(shape_err(op, format!("prediction {a:?} vs target {b:?}")));
    }
    Ok(())
}

/// Mean absolute difference.
pub fn l1_loss<T: Element>(tape: &Tape<T>, pred: Var, target: Var) -> Result<Var, TensorError> {
    check_shapes(tape, "l1_loss", pred, target)?;
    Ok(tape.mean(tape.abs(tape.sub(pred, target)?)))
}

/// Mean absolute difference of the Sobel magnitudes.
pub fn edge_loss<T: Element>(tape: &Tape<T>, pred: Var, target: Var) -> Result<Var, TensorError> {
    check_shapes(tape, "edge_loss", pred, target)?;
    let sp = sobel_on_tape(tape, pred)?;
    let st = sobel_on_tape(tape, target)?;
    Ok(tape.mean(tape.abs(tape.sub(sp, st)?)))
}

pub fn training_loss<T: Element>(
    tape: &Tape<T>,
    pred: Var,
    target: Var,
    kind: LossKind,
    edge_weight: f64,
) -> Result<Var, TensorError> {
    let l1 = l1_loss(tape, pred, target)?;
    match kind {
        LossKind::L1 => Ok(l1),
        LossKind::L1PlusEdge => {
            let e = edge_loss(tape, pred, target)?;
            tape.add(l1, tape.scale(e, edge_weight))
        }
    }
}
