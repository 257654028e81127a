/// One module's contribution to a [`CostReport`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostRow {
    pub path: String,
    pub params: u64,
    /// Multiply-accumulates.
    pub flops: u64,
}

/// Parameter and multiply-accumulate totals with a per-module breakdown.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostReport {
    pub input_size: usize,
    pub rows: Vec<CostRow>,
}

impl CostReport {
    pub fn total_params(&self) -> u64 {
        self.rows.iter().map(|r| r.params).sum()
    }

    pub fn total_flops(&self) -> u64 {
        self.rows.iter().map(|r| r.flops).sum()
    }
}

/// Trainable element count. Batch-norm running statistics are excluded.
pub fn count_params(model: &crate::backbone::IFormer) -> u64 {
    model.layout.num_trainable()
}

/// Per-module parameters and multiply-accumulates at `input_size`.
pub fn count_flops(model: &crate::backbone::IFormer, input_size: usize) -> CostReport {
    model.cost(input_size)
}
