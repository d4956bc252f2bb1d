use rand::Rng;

/// Random graph, possibly disconnected, with at most 8 nodes and positive weights.
pub fn random_graph(rng: &mut impl Rng) -> (usize, Vec<(usize, usize, f64)>) {
    let n = rng.random_range(2..=8);
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random_bool(0.45) {
                edges.push((a, b, rng.random_range(0.1..10.0)));
            }
        }
    }
    (n, edges)
}

/// Minimum cost and the set of optimal first hops, by enumerating every simple path.
pub fn brute_force(n: usize, edges: &[(usize, usize, f64)], src: usize, dst: usize) -> (f64, Vec<usize>) {
    let mut adj = vec![vec![]; n];
    for &(a, b, w) in edges {
        adj[a].push((b, w));
        adj[b].push((a, w));
    }
    let mut paths: Vec<(f64, usize)> = Vec::new();
    let mut visited = vec![false; n];
    fn walk(
        at: usize,
        dst: usize,
        cost: f64,
        first: Option<usize>,
        adj: &[Vec<(usize, f64)>],
        visited: &mut [bool],
        out: &mut Vec<(f64, usize)>,
    ) {
        if at == dst {
            out.push((cost, first.unwrap()));
            return;
        }
        visited[at] = true;
        for &(nxt, w) in &adj[at] {
            if !visited[nxt] {
                walk(nxt, dst, cost + w, first.or(Some(nxt)), adj, visited, out);
            }
        }
        visited[at] = false;
    }
    walk(src, dst, 0.0, None, &adj, &mut visited, &mut paths);
    let best = paths.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let mut firsts: Vec<usize> = paths
        .iter()
        .filter(|p| (p.0 - best).abs() <= 1e-9 * best.max(1.0))
        .map(|p| p.1)
        .collect();
    firsts.sort_unstable();
    firsts.dedup();
    (best, firsts)
}
