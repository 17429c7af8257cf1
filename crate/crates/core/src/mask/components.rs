use super::Mask;

/// Splits a mask into its 4-connected components, ordered by the raster
/// position of each component's first pixel.
pub fn connected_components(mask: &Mask) -> Vec<Mask> {
    let (w, h) = mask.dims();
    let n = w as usize * h as usize;
    let mut label = vec![0u32; n];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..n {
        if !mask.bits()[start] || label[start] != 0 {
            continue;
        }
        let id = out.len() as u32 + 1;
        let mut bits = vec![false; n];
        label[start] = id;
        stack.push(start);
        while let Some(i) = stack.pop() {
            bits[i] = true;
            let x = (i % w as usize) as u32;
            let y = (i / w as usize) as u32;
            let mut visit = |j: usize| {
                if mask.bits()[j] && label[j] == 0 {
                    label[j] = id;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w as usize);
            }
            if y + 1 < h {
                visit(i + w as usize);
            }
        }
        out.push(Mask::from_bits(w, h, bits).expect("dimensions taken from input"));
    }
    out
}
