use crate::data::Sample;
use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::network::HeadKind;

/// Grid cell holding the box centre, and the centre's offset inside it.
pub fn assign_cell(sample: &Sample, grid_size: usize) -> (usize, [f64; 4]) {
    let g = grid_size as f64;
    let col = ((sample.bbox.cx * g).floor() as usize).min(grid_size - 1);
    let row = ((sample.bbox.cy * g).floor() as usize).min(grid_size - 1);
    let dx = sample.bbox.cx * g - col as f64;
    let dy = sample.bbox.cy * g - row as f64;
    (
        row * grid_size + col,
        [dx, dy, sample.bbox.w, sample.bbox.h],
    )
}

/// Per-sample loss on a head output node.
///
/// Classification: cross-entropy. Grid heads: mean objectness BCE over
/// cells, plus class cross-entropy and offset L1 at the positive cell.
pub fn sample_loss(g: &mut Graph, out: NodeId, kind: HeadKind, sample: &Sample) -> Result<NodeId> {
    match kind {
        HeadKind::Classification { .. } => g.softmax_cross_entropy(out, sample.label),
        HeadKind::Localization {
            num_classes,
            grid_size,
        } => {
            let cells = grid_size * grid_size;
            let (cell, offsets) = assign_cell(sample, grid_size);
            let obj = g.gather(out, (0..cells).collect())?;
            let mut targets = vec![0.0; cells];
            targets[cell] = 1.0;
            let bce = g.bce_with_logits(obj, targets)?;
            let bce = g.scale(bce, 1.0 / cells as f64)?;
            let cls = g.gather(
                out,
                (0..num_classes).map(|k| (1 + k) * cells + cell).collect(),
            )?;
            let ce = g.softmax_cross_entropy(cls, sample.label)?;
            let base = 1 + num_classes;
            let off = g.gather(out, (0..4).map(|i| (base + i) * cells + cell).collect())?;
            let l1 = g.l1(off, offsets.to_vec())?;
            g.add_all(&[bce, ce, l1])
        }
    }
}
