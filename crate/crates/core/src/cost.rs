//! Parameter and FLOP accounting.
//!
//! Convention: one multiply-accumulate counts as 2 FLOPs. A convolution costs
//! `2 * Cout * Cin * kh * kw * Hout * Wout` (bias adds are not counted).
//! Batch norm, activations, elementwise add/mul, resizes and pooling cost one
//! FLOP per output element. Concatenation is free.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::tensor::Shape;

pub const FLOP_CONVENTION: &str = "multiply-accumulate = 2 FLOPs; conv = 2*Cout*Cin*kh*kw*Hout*Wout; \
bn/activation/add/mul/resize/pool = 1 FLOP per output element; concat = 0";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CostKind {
    Conv,
    BatchNorm,
    Activation,
    Elementwise,
    Resize,
    Pool,
    Concat,
}

impl CostKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Conv => "conv",
            Self::BatchNorm => "bn",
            Self::Activation => "act",
            Self::Elementwise => "eltwise",
            Self::Resize => "resize",
            Self::Pool => "pool",
            Self::Concat => "concat",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostEntry {
    pub module: String,
    pub layer: String,
    pub kind: CostKind,
    pub params: u64,
    pub flops: u64,
    pub output: Shape,
}

/// Per-layer costs of one forward pass at a stated input resolution.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CostReport {
    pub input_h: usize,
    pub input_w: usize,
    pub entries: Vec<CostEntry>,
}

impl CostReport {
    pub fn total_params(&self) -> u64 {
        self.entries.iter().map(|e| e.params).sum()
    }

    pub fn total_flops(&self) -> u64 {
        self.entries.iter().map(|e| e.flops).sum()
    }

    /// `(params, flops)` per module, in module-name order.
    pub fn per_module(&self) -> BTreeMap<String, (u64, u64)> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            let slot = out.entry(e.module.clone()).or_insert((0, 0));
            slot.0 += e.params;
            slot.1 += e.flops;
        }
        out
    }

    /// Totals grouped by the module family (prefix before the first dot).
    pub fn per_family(&self) -> BTreeMap<String, (u64, u64)> {
        let mut out = BTreeMap::new();
        for (m, (p, f)) in self.per_module() {
            let family = m.split('.').next().unwrap_or(&m).to_string();
            let slot = out.entry(family).or_insert((0, 0));
            slot.0 += p;
            slot.1 += f;
        }
        out
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# input {}x{}; FLOP convention: {FLOP_CONVENTION}", self.input_h, self.input_w);
        let _ = writeln!(s, "module\tlayer\tkind\toutput\tparams\tflops");
        for e in &self.entries {
            let o = e.output;
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}x{}x{}x{}\t{}\t{}",
                e.module,
                e.layer,
                e.kind.as_str(),
                o.n,
                o.c,
                o.h,
                o.w,
                e.params,
                e.flops
            );
        }
        for (m, (p, f)) in self.per_family() {
            let _ = writeln!(s, "{m}\t(total)\t-\t-\t{p}\t{f}");
        }
        let _ = writeln!(s, "all\t(total)\t-\t-\t{}\t{}", self.total_params(), self.total_flops());
        s
    }
}

pub fn conv_params(cin: usize, cout: usize, kh: usize, kw: usize, bias: bool) -> u64 {
    (cout * cin * kh * kw + if bias { cout } else { 0 }) as u64
}

pub fn conv_flops(cin: usize, cout: usize, kh: usize, kw: usize, out: Shape) -> u64 {
    2 * (out.n * cout * cin * kh * kw * out.h * out.w) as u64
}
