//! Hand-written cost spreadsheet for `configs/toy.cfg` at 32x32.

use std::collections::BTreeMap;

/// Layer-by-layer spreadsheet of the toy network at 32x32, written out by hand.
#[derive(Default)]
pub struct Ledger {
    pub rows: BTreeMap<String, (u64, u64)>,
    current: String,
}

impl Ledger {
    fn module(&mut self, name: &str) -> &mut Self {
        self.current = name.to_string();
        self
    }

    fn row(&mut self, params: u64, flops: u64) -> &mut Self {
        let slot = self.rows.entry(self.current.clone()).or_insert((0, 0));
        slot.0 += params;
        slot.1 += flops;
        self
    }

    fn conv(&mut self, cin: u64, cout: u64, k: u64, h: u64, w: u64) -> &mut Self {
        self.row(cout * cin * k * k + cout, 2 * cout * cin * k * k * h * w)
    }

    fn bn(&mut self, c: u64, h: u64, w: u64) -> &mut Self {
        self.row(2 * c, c * h * w)
    }

    /// Any one-FLOP-per-output-element op.
    fn pointwise(&mut self, c: u64, h: u64, w: u64) -> &mut Self {
        self.row(0, c * h * w)
    }

    fn cbr(&mut self, cin: u64, cout: u64, h: u64, w: u64) -> &mut Self {
        self.conv(cin, cout, 3, h, w).bn(cout, h, w).pointwise(cout, h, w)
    }

    fn residual_block(&mut self, c: u64, h: u64, w: u64) -> &mut Self {
        self.cbr(c, c, h, w).conv(c, c, 3, h, w).bn(c, h, w).pointwise(c, h, w).pointwise(c, h, w)
    }
}

pub fn toy_ledger() -> Ledger {
    let mut l = Ledger::default();
    l.module("backbone")
        .cbr(1, 4, 16, 16)
        .cbr(4, 4, 16, 16)
        .residual_block(4, 16, 16)
        .cbr(4, 4, 8, 8)
        .residual_block(4, 8, 8)
        .cbr(4, 8, 4, 4)
        .residual_block(8, 4, 4)
        .cbr(8, 8, 2, 2)
        .residual_block(8, 2, 2)
        .cbr(8, 8, 1, 1)
        .residual_block(8, 1, 1);

    for (name, cin, s) in [("scm1", 4, 16), ("scm2", 4, 8), ("scm3", 8, 4), ("scm4", 8, 2), ("scm5", 8, 1)] {
        l.module(name)
            .conv(cin, 8, 1, s, s)
            .cbr(8, 8, s, s)
            .cbr(8, 8, s, s)
            .cbr(8, 8, s, s)
            .cbr(24, 8, s, s)
            .conv(cin, 8, 1, s, s)
            .cbr(8, 8, s, s)
            .pointwise(8, s, s)
            .cbr(8, 8, s, s);
    }

    for (name, s) in [("cfm1", 16), ("cfm2", 8), ("cfm3", 4), ("cfm4", 2)] {
        l.module(name)
            .pointwise(8, s, s)
            .cbr(16, 16, s, s)
            .cbr(16, 16, s, s)
            .cbr(16, 16, s, s)
            // local attention
            .conv(16, 4, 1, s, s)
            .pointwise(4, s, s)
            .conv(4, 16, 1, s, s)
            .pointwise(16, s, s)
            // global attention on the pooled vector
            .pointwise(16, 1, 1)
            .conv(16, 4, 1, 1, 1)
            .pointwise(4, 1, 1)
            .conv(4, 16, 1, 1, 1)
            .pointwise(16, 1, 1)
            // two residual enhancements, a multiply and an add each
            .pointwise(16, s, s)
            .pointwise(16, s, s)
            .pointwise(16, s, s)
            .pointwise(16, s, s)
            .cbr(48, 8, s, s);
    }

    l.module("egm")
        .conv(4, 8, 1, 8, 8)
        .pointwise(8, 16, 16)
        .cbr(12, 8, 16, 16)
        .conv(8, 8, 1, 1, 1)
        .pointwise(8, 16, 16)
        .cbr(16, 8, 16, 16)
        .conv(8, 1, 1, 16, 16)
        .pointwise(1, 32, 32);

    l.module("heads").conv(8, 1, 1, 16, 16).pointwise(1, 16, 16);

    for (name, s) in [("head1", 16), ("head2", 8), ("head3", 4), ("head4", 2)] {
        l.module(name)
            .pointwise(1, s, s)
            .pointwise(8, s, s)
            .pointwise(8, s, s)
            .cbr(8, 8, s, s)
            .cbr(8, 8, s, s)
            .conv(8, 1, 1, s, s)
            .pointwise(1, 32, 32);
    }
    l
}
