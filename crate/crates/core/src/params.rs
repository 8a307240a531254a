//! Uniform named access to model parameters, shared by the optimizer and the
//! checkpoint writer.

use crate::tensor::{BatchNormParams, KernelBank};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// Saved in checkpoints but never touched by gradients (running statistics).
    Buffer,
}

pub type Visitor<'a> = dyn FnMut(&str, [usize; 4], &[f64], ParamKind) + 'a;
pub type VisitorMut<'a> = dyn FnMut(&str, [usize; 4], &mut [f64], ParamKind) + 'a;

/// A collection of named tensors visited in a fixed order.
///
/// Gradient containers are values of the same type as the parameters they
/// belong to, so zipping two visits lines parameters up with gradients.
pub trait ParamSet {
    fn visit(&self, f: &mut Visitor<'_>);
    fn visit_mut(&mut self, f: &mut VisitorMut<'_>);
}

pub fn visit_bank(prefix: &str, bank: &KernelBank, f: &mut Visitor<'_>) {
    f(
        &format!("{prefix}.weight"),
        bank.weight_dims(),
        &bank.weights,
        ParamKind::Trainable,
    );
    if let Some(b) = &bank.bias {
        f(
            &format!("{prefix}.bias"),
            [bank.out_c, 1, 1, 1],
            b,
            ParamKind::Trainable,
        );
    }
}

pub fn visit_bank_mut(prefix: &str, bank: &mut KernelBank, f: &mut VisitorMut<'_>) {
    let dims = bank.weight_dims();
    f(
        &format!("{prefix}.weight"),
        dims,
        &mut bank.weights,
        ParamKind::Trainable,
    );
    let out_c = bank.out_c;
    if let Some(b) = bank.bias.as_mut() {
        f(&format!("{prefix}.bias"), [out_c, 1, 1, 1], b, ParamKind::Trainable);
    }
}

pub fn visit_bn(prefix: &str, bn: &BatchNormParams, f: &mut Visitor<'_>) {
    let d = [bn.channels(), 1, 1, 1];
    f(&format!("{prefix}.gamma"), d, &bn.gamma, ParamKind::Trainable);
    f(&format!("{prefix}.beta"), d, &bn.beta, ParamKind::Trainable);
    f(&format!("{prefix}.running_mean"), d, &bn.running_mean, ParamKind::Buffer);
    f(&format!("{prefix}.running_var"), d, &bn.running_var, ParamKind::Buffer);
}

pub fn visit_bn_mut(prefix: &str, bn: &mut BatchNormParams, f: &mut VisitorMut<'_>) {
    let d = [bn.channels(), 1, 1, 1];
    f(&format!("{prefix}.gamma"), d, &mut bn.gamma, ParamKind::Trainable);
    f(&format!("{prefix}.beta"), d, &mut bn.beta, ParamKind::Trainable);
    f(&format!("{prefix}.running_mean"), d, &mut bn.running_mean, ParamKind::Buffer);
    f(&format!("{prefix}.running_var"), d, &mut bn.running_var, ParamKind::Buffer);
}

pub fn trainable_count<P: ParamSet + ?Sized>(p: &P) -> usize {
    let mut n = 0;
    p.visit(&mut |_, _, data, kind| {
        if kind == ParamKind::Trainable {
            n += data.len();
        }
    });
    n
}

/// All trainable values concatenated in visit order.
pub fn flatten_trainable<P: ParamSet + ?Sized>(p: &P) -> Vec<f64> {
    let mut out = Vec::new();
    p.visit(&mut |_, _, data, kind| {
        if kind == ParamKind::Trainable {
            out.extend_from_slice(data);
        }
    });
    out
}

/// Inverse of [`flatten_trainable`]. Panics if `values` has the wrong length.
pub fn load_trainable<P: ParamSet + ?Sized>(p: &mut P, values: &[f64]) {
    let mut offset = 0;
    p.visit_mut(&mut |_, _, data, kind| {
        if kind == ParamKind::Trainable {
            data.copy_from_slice(&values[offset..offset + data.len()]);
            offset += data.len();
        }
    });
    assert_eq!(offset, values.len(), "parameter vector length mismatch");
}

pub fn global_norm<P: ParamSet + ?Sized>(p: &P) -> f64 {
    let mut ss = 0.0;
    p.visit(&mut |_, _, data, kind| {
        if kind == ParamKind::Trainable {
            ss += data.iter().map(|v| v * v).sum::<f64>();
        }
    });
    ss.sqrt()
}

pub fn scale_trainable<P: ParamSet + ?Sized>(p: &mut P, k: f64) {
    p.visit_mut(&mut |_, _, data, kind| {
        if kind == ParamKind::Trainable {
            data.iter_mut().for_each(|v| *v *= k);
        }
    });
}

/// `acc += other` over trainable tensors. Both sets must share a layout.
pub fn accumulate<P: ParamSet + ?Sized>(acc: &mut P, other: &P) {
    let flat = flatten_trainable(other);
    let mut offset = 0;
    acc.visit_mut(&mut |_, _, data, kind| {
        if kind == ParamKind::Trainable {
            let len = data.len();
            for (a, b) in data.iter_mut().zip(&flat[offset..offset + len]) {
                *a += b;
            }
            offset += len;
        }
    });
    assert_eq!(offset, flat.len(), "parameter layout mismatch");
}

/// Names and dims of every tensor, in visit order.
pub fn layout<P: ParamSet + ?Sized>(p: &P) -> Vec<(String, [usize; 4], ParamKind)> {
    let mut out = Vec::new();
    p.visit(&mut |name, dims, _, kind| out.push((name.to_string(), dims, kind)));
    out
}
