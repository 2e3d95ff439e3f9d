use std::f64::consts::PI;

use hazardnav::perception::{
    masks_to_points, points_to_anxiety_cells, segment_hazards, HazardVocabulary, OracleSegmenter, ProjectionFilter,
};
use hazardnav::sim::{Scenario, World};
use hazardnav::{Anxiety, Cell};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn room_with_box(robot: [f64; 3], center: [f64; 2]) -> Scenario {
    let toml = format!(
        r#"
name = "box"
[map]
width = 12.0
height = 12.0
resolution = 0.1
origin = [0.0, 0.0]
[robot]
start = [{}, {}, {}]
goal = [11.0, 11.0, 0.0]
[sim]
depth_noise = 0.0
[[entities]]
name = "sign"
label = "danger sign"
rect = [[-0.1, -0.1], [0.1, 0.1]]
pose = [{}, {}, 0.0]
"#,
        robot[0], robot[1], robot[2], center[0], center[1]
    );
    Scenario::from_toml(&toml).unwrap()
}

fn chebyshev(a: Cell, b: Cell) -> usize {
    a.row.abs_diff(b.row).max(a.col.abs_diff(b.col))
}

#[test]
fn hazards_land_on_their_ground_truth_cells() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let seg = OracleSegmenter::new(HazardVocabulary::default());
    let filter = ProjectionFilter {
        min_support: 1,
        ..ProjectionFilter::default()
    };
    let mut cases = 0;
    while cases < 50 {
        let heading = rng.random_range(-PI..PI);
        let robot = [rng.random_range(3.0..9.0), rng.random_range(3.0..9.0), heading.to_degrees()];
        let range = rng.random_range(0.8..2.8);
        let bearing = heading + rng.random_range(-0.6..0.6);
        let center = [robot[0] + range * bearing.cos(), robot[1] + range * bearing.sin()];
        let sc = room_with_box(robot, center);
        let mut world = World::new(&sc, cases as u64).unwrap();
        let spec = *world.spec();
        let frame = world.sense();
        let masks = segment_hazards(&seg, &frame.image, &[("danger sign".to_string(), Anxiety::new(2).unwrap())]);
        let points = masks_to_points(&masks, &frame.depth, world.camera(), &frame.pose);
        assert!(!points.is_empty(), "case {cases}: box at {center:?} not seen");
        let cells = points_to_anxiety_cells(&points, &spec, &filter);
        let truth = world.entity("sign").unwrap().shape().rasterize(&spec);
        for (c, a) in &cells {
            assert_eq!(a.get(), 2);
            let near = truth.iter().map(|&t| chebyshev(*c, t)).min().unwrap();
            assert!(near <= 1, "case {cases}: cell {c:?} is {near} cells from the box");
        }
        cases += 1;
    }
}
