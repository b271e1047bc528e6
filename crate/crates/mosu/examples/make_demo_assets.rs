//! Writes the demo scenario and route under `scenarios/`. Run from the
//! workspace root: `cargo run --example make_demo_assets`.

use mosu::georoute::{local_to_geo, GeoPoint, LocalPoint};
use mosu::sim::{save_scenario, Label, Pedestrian, RobotState, SemanticGrid, SignKind, WorldState};

fn main() {
    let out = std::path::Path::new("scenarios");
    std::fs::create_dir_all(out).expect("create scenarios/");

    // 70 x 30 m block: east-west sidewalk crossing a north-south road at a
    // crosswalk, vegetation elsewhere, buildings along the north edge
    let res = 0.5;
    let mut grid = SemanticGrid::filled(140, 60, res, LocalPoint::new(-5.0, -15.0), Label::Vegetation);
    let mut paint = |e0: f64, e1: f64, n0: f64, n1: f64, label: Label| {
        for row in 0..60 {
            for col in 0..140 {
                let e = -5.0 + (col as f64 + 0.5) * res;
                let n = -15.0 + (row as f64 + 0.5) * res;
                if e >= e0 && e < e1 && n >= n0 && n < n1 {
                    grid.set_label(col, row, label);
                }
            }
        }
    };
    paint(-5.0, 65.0, -2.0, 2.0, Label::Sidewalk);
    paint(20.0, 26.0, -15.0, 15.0, Label::Road);
    paint(-5.0, 65.0, 11.0, 15.0, Label::Building);
    for row in 0..60 {
        for col in 0..140 {
            let e = -5.0 + (col as f64 + 0.5) * res;
            let n = -15.0 + (row as f64 + 0.5) * res;
            if grid.label_at_cell(col, row) == Label::Road && (-2.0..2.0).contains(&n) && e >= 20.0 && e < 26.0 {
                let idx = grid.idx(col, row);
                grid.crosswalk[idx] = true;
            }
        }
    }

    let world = WorldState {
        grid,
        robot: RobotState { x: 0.0, y: 0.0, heading: 0.0, v: 0.0, w: 0.0 },
        pedestrians: vec![Pedestrian {
            position: LocalPoint::new(35.0, 6.0),
            velocity: (0.0, -0.3),
            group_id: 0,
        }],
        signs: vec![(LocalPoint::new(19.0, 3.0), SignKind::Stop)],
        time: 0.0,
        collision: false,
        d_opt_m: None,
    };
    save_scenario(&world, &out.join("crosswalk_block.scn")).expect("write scenario");

    // route: 55 m due east from the robot start, in decimal degrees
    let base = GeoPoint::new(37.0, -122.0);
    let mut route = String::new();
    for p in [LocalPoint::new(0.0, 0.0), LocalPoint::new(55.0, 0.0)] {
        let g = local_to_geo(base, p).expect("within tangent-plane validity");
        route.push_str(&format!("{:.12},{:.12}\n", g.lat, g.lon));
    }
    std::fs::write(out.join("crosswalk_block_route.txt"), route).expect("write route");
    println!("wrote scenarios/crosswalk_block.scn and scenarios/crosswalk_block_route.txt");
}
