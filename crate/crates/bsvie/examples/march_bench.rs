use bsvie::grid::{StoreSelect, TriangleGrid};
use bsvie::model::catalog_entry;
use bsvie::pde_type1::{solve_type1_fd_with, NoObserver, Type1Options};
use std::time::Instant;

fn main() {
    let opts = Type1Options { t_store: StoreSelect::None, s_store: StoreSelect::None };
    for name in ["heat-terminal-x", "diagonal-exponential"] {
        let e = catalog_entry(name).unwrap();
        let p = e.problem.type1().unwrap();
        let grid = TriangleGrid::uniform(1.0, 200, 8.0, 401).unwrap();
        let t0 = Instant::now();
        let f = solve_type1_fd_with(p, &grid, &opts, &mut NoObserver).unwrap();
        println!("{name}: {:.1} s, diag(0,0) = {:.6}", t0.elapsed().as_secs_f64(), f.diag_value(0, 0.0, 0));
    }
}
