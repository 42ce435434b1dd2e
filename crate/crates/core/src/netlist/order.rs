use std::cmp::Ordering;

use super::Netlist;

/// Greedy placement order over the macro set.
///
/// Each round picks the unordered macro maximizing, lexicographically,
/// (incident nets, area, already-ordered macros sharing a net with it), then
/// the lowest module id.
pub fn compute_place_order(netlist: &Netlist) -> Vec<usize> {
    let mut macros = netlist.macros.clone();
    macros.sort_unstable();
    macros.dedup();
    let count = macros.len();

    let nets: Vec<Vec<usize>> = macros.iter().map(|&m| netlist.nets_of(m)).collect();
    let areas: Vec<f64> = macros.iter().map(|&m| netlist.modules[m].area()).collect();
    // neighbours[i]: indices (into `macros`) of macros sharing a net with i
    let mut net_members: Vec<Vec<usize>> = vec![Vec::new(); netlist.nets.len()];
    for (i, ns) in nets.iter().enumerate() {
        for &n in ns {
            net_members[n].push(i);
        }
    }
    let mut neighbours: Vec<Vec<usize>> = vec![Vec::new(); count];
    for members in &net_members {
        for &a in members {
            for &b in members {
                if a != b {
                    neighbours[a].push(b);
                }
            }
        }
    }
    for n in &mut neighbours {
        n.sort_unstable();
        n.dedup();
    }

    let mut placed_neighbours = vec![0usize; count];
    let mut taken = vec![false; count];
    let mut order = Vec::with_capacity(count);
    for _ in 0..count {
        let mut best: Option<usize> = None;
        for i in (0..count).filter(|&i| !taken[i]) {
            let better = match best {
                None => true,
                Some(b) => {
                    let ord = nets[i]
                        .len()
                        .cmp(&nets[b].len())
                        .then(areas[i].total_cmp(&areas[b]))
                        .then(placed_neighbours[i].cmp(&placed_neighbours[b]));
                    // ties keep the earlier (lower id) candidate
                    ord == Ordering::Greater
                }
            };
            if better {
                best = Some(i);
            }
        }
        let b = best.expect("unordered macro remains");
        taken[b] = true;
        order.push(macros[b]);
        for &n in &neighbours[b] {
            placed_neighbours[n] += 1;
        }
    }
    order
}
