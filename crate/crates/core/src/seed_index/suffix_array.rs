/// Suffix array of `text` by prefix doubling with radix (counting) sorts,
/// `O(n log n)`. `text` must already end with a unique smallest sentinel.
pub fn suffix_array(text: &[u8]) -> Vec<usize> {
    let n = text.len();
    if n == 0 {
        return Vec::new();
    }
    let mut sa: Vec<usize> = (0..n).collect();
    sa.sort_by_key(|&i| text[i]);
    let mut rank = vec![0usize; n];
    for w in 1..n {
        rank[sa[w]] = rank[sa[w - 1]] + usize::from(text[sa[w]] != text[sa[w - 1]]);
    }
    let mut tmp = vec![0usize; n];
    let mut second = Vec::with_capacity(n);
    let mut count = vec![0usize; n + 1];
    let mut k = 1;
    while rank[sa[n - 1]] < n - 1 {
        // Order by the second key rank[i + k] (missing sorts first).
        second.clear();
        second.extend(n - k.min(n)..n);
        second.extend(sa.iter().filter(|&&i| i >= k).map(|&i| i - k));

        // Stable counting sort by the first key.
        let max_rank = rank[sa[n - 1]];
        count[..=max_rank + 1].fill(0);
        for &i in &second {
            count[rank[i] + 1] += 1;
        }
        for r in 0..=max_rank {
            count[r + 1] += count[r];
        }
        for &i in &second {
            sa[count[rank[i]]] = i;
            count[rank[i]] += 1;
        }

        let key = |i: usize, rank: &[usize]| (rank[i], if i + k < n { rank[i + k] as isize } else { -1 });
        tmp[sa[0]] = 0;
        for w in 1..n {
            tmp[sa[w]] = tmp[sa[w - 1]] + usize::from(key(sa[w], &rank) != key(sa[w - 1], &rank));
        }
        std::mem::swap(&mut rank, &mut tmp);
        k *= 2;
    }
    sa
}
