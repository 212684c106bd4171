fn main() {
    use semilin::grid::*;
    use semilin::imex::*;
    let g = Grid::new(-10.0, 10.0, 2001).unwrap();
    let reaction = Reaction::flagship(&PotentialProfile::Constant { p: 0.0 }, g);
    let u0 = GridFunction::from_fn(g, |x| (-x * x).exp());
    let h_list = [1e-2, 5e-3, 2.5e-3, 1.25e-3, 6.25e-4];
    let rows = convergence_study(&u0, 0.1, &h_list, &reaction).unwrap();
    for r in rows {
        println!("h={:.2e} d={:.6e} ratio={:?}", r.h_coarse, r.distance, r.ratio);
    }
}
