//! Connected components of 2D masks.

use alloc::vec;
use alloc::vec::Vec;

use crate::mask::Mask2d;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

impl Connectivity {
    fn offsets(&self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
            Connectivity::Eight => &[
                (-1, -1),
                (0, -1),
                (1, -1),
                (-1, 0),
                (1, 0),
                (-1, 1),
                (0, 1),
                (1, 1),
            ],
        }
    }
}

/// Component labelling. Labels start at 1 and follow the row-major order of
/// each component's first pixel; 0 is background. `sizes[l - 1]` is the pixel
/// count of label `l`.
pub fn label_components(mask: &Mask2d, connectivity: Connectivity) -> (Vec<u32>, Vec<usize>) {
    let (w, h) = (mask.width(), mask.height());
    let mut labels = vec![0u32; w * h];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask.bits()[start] || labels[start] != 0 {
            continue;
        }
        let label = sizes.len() as u32 + 1;
        labels[start] = label;
        stack.push(start);
        let mut size = 0;
        while let Some(i) = stack.pop() {
            size += 1;
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for &(dx, dy) in connectivity.offsets() {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if mask.bits()[j] && labels[j] == 0 {
                    labels[j] = label;
                    stack.push(j);
                }
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// Keeps only the largest component. Equal sizes resolve to the component
/// whose first pixel comes earliest in row-major order.
pub fn largest_component(mask: &Mask2d, connectivity: Connectivity) -> Mask2d {
    largest_component_with_seeds(mask, connectivity, &[])
}

/// Like [`largest_component`], additionally keeping every component that
/// contains one of the `(x, y)` seeds.
pub fn largest_component_with_seeds(
    mask: &Mask2d,
    connectivity: Connectivity,
    seeds: &[(usize, usize)],
) -> Mask2d {
    let (labels, sizes) = label_components(mask, connectivity);
    let mut keep = vec![false; sizes.len() + 1];
    let mut best: Option<(usize, usize)> = None;
    for (i, &s) in sizes.iter().enumerate() {
        if best.is_none_or(|(_, bs)| s > bs) {
            best = Some((i + 1, s));
        }
    }
    if let Some((l, _)) = best {
        keep[l] = true;
    }
    let w = mask.width();
    for &(x, y) in seeds {
        if x < w && y < mask.height() {
            keep[labels[y * w + x] as usize] = true;
        }
    }
    keep[0] = false;
    let bits = labels.iter().map(|&l| keep[l as usize]).collect();
    Mask2d::from_bits(w, mask.height(), bits)
}

/// Clears the components containing any of the `(x, y)` seeds.
pub fn remove_components_at(
    mask: &Mask2d,
    connectivity: Connectivity,
    seeds: &[(usize, usize)],
) -> Mask2d {
    let (labels, sizes) = label_components(mask, connectivity);
    let mut drop = vec![false; sizes.len() + 1];
    let w = mask.width();
    for &(x, y) in seeds {
        if x < w && y < mask.height() {
            drop[labels[y * w + x] as usize] = true;
        }
    }
    let bits = labels
        .iter()
        .map(|&l| l != 0 && !drop[l as usize])
        .collect();
    Mask2d::from_bits(w, mask.height(), bits)
}
