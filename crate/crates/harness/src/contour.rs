//! Local-maximum regions of a function sampled on a square grid.

/// Number of local-maximum regions: 8-connected sets of equal-valued cells
/// whose neighbours outside the set are all strictly lower. `values` is
/// row-major with `res` cells per side.
pub fn count_local_maxima(values: &[f64], res: usize) -> usize {
    assert_eq!(values.len(), res * res, "grid must be res x res");
    let neighbours = move |k: usize| {
        let (i, j) = ((k / res) as isize, (k % res) as isize);
        (-1..=1)
            .flat_map(move |di| (-1..=1).map(move |dj| (i + di, j + dj)))
            .filter(move |&(a, b)| (a, b) != (i, j) && a >= 0 && b >= 0 && a < res as isize && b < res as isize)
            .map(move |(a, b)| a as usize * res + b as usize)
    };

    let mut seen = vec![false; res * res];
    let mut regions = 0;
    for start in 0..res * res {
        if seen[start] {
            continue;
        }
        let v = values[start];
        let mut is_max = true;
        seen[start] = true;
        let mut stack = vec![start];
        while let Some(k) = stack.pop() {
            for n in neighbours(k) {
                if values[n] > v {
                    is_max = false;
                } else if values[n] == v && !seen[n] {
                    seen[n] = true;
                    stack.push(n);
                }
            }
        }
        regions += usize::from(is_max);
    }
    regions
}
