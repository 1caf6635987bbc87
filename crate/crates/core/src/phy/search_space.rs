//! UE-specific search space: hashed candidate start CCEs per aggregation level.

const HASH_A: u64 = 39827;
const HASH_D: u64 = 65537;

/// Candidates per level for levels 1, 2, 4, 8.
pub fn candidates_per_level(level: usize) -> usize {
    match level {
        1 | 2 => 6,
        4 | 8 => 2,
        _ => 0,
    }
}

/// `Y_k` for subframe `sfn`: `Y_{-1} = rnti`, `Y_k = 39827 * Y_{k-1} mod 65537`,
/// with `k` the subframe number inside its 10 ms radio frame.
pub fn hash_y(rnti: u16, sfn: u64) -> u64 {
    let k = sfn % 10;
    let mut y = rnti as u64;
    for _ in 0..=k {
        y = (HASH_A * y) % HASH_D;
    }
    y
}

/// Start CCEs of the UE's candidates at `level` in a control region of
/// `n_cce` usable CCEs, in candidate order, without duplicates. Every start is
/// a multiple of `level`.
pub fn search_space(rnti: u16, sfn: u64, level: usize, n_cce: usize) -> Vec<usize> {
    let positions = n_cce / level.max(1);
    if positions == 0 {
        return Vec::new();
    }
    let y = hash_y(rnti, sfn);
    let mut out = Vec::with_capacity(candidates_per_level(level));
    for m in 0..candidates_per_level(level) as u64 {
        let start = level * ((y + m) % positions as u64) as usize;
        if !out.contains(&start) {
            out.push(start);
        }
    }
    out
}
