use super::*;

fn rig() -> RenderRig {
    RenderRig {
        camera: CameraModel::new(48.0, 64.0, 128, 128).unwrap(),
        horizon_row: 48.0,
        camera_height: 1.5,
    }
}

fn output_grid() -> BevGridSpec {
    BevGridSpec::new(48, 40, 0.25, 1.0).unwrap()
}

fn empty_scene() -> WorldScene {
    WorldScene {
        id: 0,
        classes: ClassKind::first(4).unwrap(),
        drivable: vec![],
        crossings: vec![],
        agents: vec![],
    }
}

fn origin() -> EgoPose {
    EgoPose::new(0, 0, 0.0, 0.0, 0.0)
}

fn car_at(x: f64, z: f64, height: f64) -> Agent {
    Agent {
        class: ClassKind::Car,
        footprint: Rect {
            cx: x,
            cz: z,
            half_w: 0.9,
            half_l: 2.0,
            angle: 0.0,
        },
        height,
        velocity: (0.0, 0.0),
    }
}

fn pixel(img: &[u8], w: usize, r: usize, c: usize) -> [u8; 3] {
    let i = (r * w + c) * 3;
    [img[i], img[i + 1], img[i + 2]]
}

#[test]
fn scenes_are_deterministic() {
    let cfg = WorldConfig::default();
    assert_eq!(generate_scene(7, &cfg).unwrap(), generate_scene(7, &cfg).unwrap());
    assert_ne!(generate_scene(7, &cfg).unwrap(), generate_scene(8, &cfg).unwrap());
}

#[test]
fn agent_counts_respect_bounds() {
    let cfg = WorldConfig {
        cars: (2, 6),
        pedestrians: (1, 3),
        ..Default::default()
    };
    for seed in 0..1000 {
        let s = generate_scene(seed, &cfg).unwrap();
        let cars = s.agents.iter().filter(|a| a.class == ClassKind::Car).count();
        let peds = s.agents.len() - cars;
        assert!((2..=6).contains(&cars) && (1..=3).contains(&peds), "seed {seed}");
        assert!(!s.drivable.is_empty());
        for a in &s.agents {
            assert!(s.drivable[0].contains(a.footprint.cx, a.footprint.cz));
        }
    }
}

#[test]
fn zero_density_gives_layout_only() {
    let cfg = WorldConfig {
        cars: (0, 0),
        pedestrians: (0, 0),
        ..Default::default()
    };
    let s = generate_scene(3, &cfg).unwrap();
    assert!(s.agents.is_empty());
    assert!(!s.drivable.is_empty());
}

#[test]
fn infeasible_configs_fail() {
    let zero = WorldConfig {
        road_width: (0.0, 0.0),
        ..Default::default()
    };
    assert!(matches!(generate_scene(0, &zero), Err(Error::Scene(_))));
    let crowded = WorldConfig {
        length: 25.0,
        cars: (400, 400),
        ..Default::default()
    };
    assert!(generate_scene(0, &crowded).is_err());
    let inverted = WorldConfig {
        cars: (3, 2),
        ..Default::default()
    };
    assert!(generate_scene(0, &inverted).is_err());
}

#[test]
fn empty_scene_is_ground_and_sky() {
    let rig = rig();
    let img = render_rgb(&empty_scene(), &origin(), &rig);
    for r in 0..128 {
        for c in 0..128 {
            let expect = if r as f64 + 0.5 > 48.0 { GROUND } else { SKY };
            assert_eq!(pixel(&img, 128, r, c), expect);
        }
    }
}

#[test]
fn ground_points_project_to_their_column() {
    let rig = rig();
    let scene = generate_scene(
        11,
        &WorldConfig {
            cars: (0, 0),
            pedestrians: (0, 0),
            ..Default::default()
        },
    )
    .unwrap();
    let pose = EgoPose::new(0, 11, 0.3, 1.0, 0.1);
    let img = render_rgb(&scene, &pose, &rig);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut probed = 0;
    while probed < 100 {
        let z: f64 = rng.random_range(2.0..30.0);
        let x: f64 = rng.random_range(-1.2..1.2) * z;
        let u = rig.camera.f * x / z + rig.camera.u0;
        let v = rig.horizon_row + rig.camera.f * rig.camera_height / z;
        if !(1.0..127.0).contains(&u) || !(1.0..127.0).contains(&v) {
            continue;
        }
        let (wx, wz) = pose.to_world((x, z));
        let want = scene.ground_color(wx, wz);
        let (r, c) = (v as usize, u as usize);
        let near = (r - 1..=r + 1).any(|rr| (c - 1..=c + 1).any(|cc| pixel(&img, 128, rr, cc) == want));
        assert!(near, "({x},{z}) at ({r},{c})");
        match trace_pixel(&scene, &pose, &rig, r, c) {
            Surface::Ground { x: gx, z: gz } => {
                let col = rig.camera.f * gx / gz + rig.camera.u0;
                assert!((col - u).abs() <= 1.0);
            }
            s => panic!("{s:?}"),
        }
        probed += 1;
    }
}

#[test]
fn nearer_box_hides_farther_box() {
    let rig = rig();
    let mut scene = empty_scene();
    scene.agents = vec![car_at(0.0, 12.0, 1.6), car_at(0.4, 7.0, 1.6)];
    let pose = origin();
    let agents = agents_in_frame(&scene, &pose);
    let mut both = 0;
    for r in 0..128 {
        for c in 0..128 {
            let s = trace_pixel(&scene, &pose, &rig, r, c);
            // would the far box alone be hit here?
            let far_only = trace(&agents[..1], &rig, c as f64 + 0.5, r as f64 + 0.5);
            let near_only = trace(&agents[1..], &rig, c as f64 + 0.5, r as f64 + 0.5);
            if let (Surface::Agent { .. }, Surface::Agent { .. }) = (far_only, near_only) {
                both += 1;
                assert!(matches!(s, Surface::Agent { index: 1, .. }), "({r},{c}) {s:?}");
            }
        }
    }
    assert!(both > 50);
}

#[test]
fn rasterised_area_matches_rectangle() {
    let mut scene = empty_scene();
    scene.drivable = vec![Rect {
        cx: 0.3,
        cz: 6.0,
        half_w: 2.1,
        half_l: 3.3,
        angle: 0.4,
    }];
    let spec = output_grid();
    let (gt, vis) = make_gt(&scene, &origin(), &spec);
    let cells: f32 = (0..48 * 40).map(|i| gt.data()[i]).sum();
    let cell_area = spec.cell_m * spec.cell_m;
    let expect = scene.drivable[0].area() / cell_area;
    // perimeter in cells bounds the boundary error
    let perimeter = 4.0 * (2.1 + 3.3) / spec.cell_m;
    assert!((cells as f64 - expect).abs() <= perimeter, "{cells} vs {expect}");
    assert_eq!(vis.visible_count(), 48 * 40);
}

#[test]
fn agent_shadow_on_a_coarse_grid() {
    let mut scene = empty_scene();
    scene.agents = vec![Agent {
        class: ClassKind::Pedestrian,
        footprint: Rect {
            cx: 0.0,
            cz: 10.0,
            half_w: 0.5,
            half_l: 0.5,
            angle: 0.0,
        },
        height: 1.8,
        velocity: (0.0, 0.0),
    }];
    // 1 m cells, z ∈ [1, 21], x ∈ [−5, 5]
    let spec = BevGridSpec::new(20, 10, 1.0, 1.0).unwrap();
    let (gt, vis) = make_gt(&scene, &origin(), &spec);
    for r in 0..20 {
        for c in 0..10 {
            let (x, z) = (spec.col_x(c), spec.row_z(r));
            // hand ray cast: the shadow of [−0.5, 0.5] × [9.5, 10.5] seen from the origin
            let behind = z > 10.5 && (x / z).abs() * 9.5 <= 0.5 && !(x.abs() <= 0.5 && (9.5..=10.5).contains(&z))
                || z > 10.5 && (x / z).abs() * 10.5 <= 0.5;
            if behind {
                assert!(!vis.is_visible(r, c), "({x},{z})");
            }
            if x.abs() > 1.0 || z < 9.5 {
                assert!(vis.is_visible(r, c), "({x},{z})");
            }
        }
    }
    // the agent's own cell is occupied and visible
    let (r, c) = (10, 4);
    assert_eq!((spec.col_x(c), spec.row_z(r)), (-0.5, 10.5));
    let own = (0..20).flat_map(|r| (0..10).map(move |c| (r, c))).filter(|&(r, c)| gt.at(&[3, r, c]) > 0.0);
    for (r, c) in own {
        assert!(vis.is_visible(r, c));
    }
}

#[test]
fn rendering_agrees_with_ground_truth_on_visible_ground() {
    let rig = rig();
    let spec = output_grid();
    let mut agree = 0;
    let mut total = 0;
    for seed in 0..5 {
        let scene = generate_scene(seed, &WorldConfig::default()).unwrap();
        let poses = simulate_trajectory(&scene, 3, &TrajectoryConfig::default(), seed);
        for pose in &poses {
            let img = render_rgb(&scene, pose, &rig);
            let (gt, vis) = make_gt(&scene, pose, &spec);
            for r in 0..spec.depth_cells {
                for c in 0..spec.lateral_cells {
                    let (x, z) = (spec.col_x(c), spec.row_z(r));
                    let u = rig.camera.f * x / z + rig.camera.u0;
                    let v = rig.horizon_row + rig.camera.f * rig.camera_height / z;
                    let occupied = gt.at(&[2, r, c]) > 0.0 || gt.at(&[3, r, c]) > 0.0;
                    if !vis.is_visible(r, c) || occupied || !(0.0..128.0).contains(&u) || v >= 128.0 {
                        continue;
                    }
                    let want = if gt.at(&[1, r, c]) > 0.0 {
                        ClassKind::Crossing.color()
                    } else if gt.at(&[0, r, c]) > 0.0 {
                        ClassKind::Drivable.color()
                    } else {
                        GROUND
                    };
                    total += 1;
                    agree += (pixel(&img, 128, v as usize, u as usize) == want) as usize;
                }
            }
        }
    }
    assert!(agree as f64 >= 0.95 * total as f64, "{agree}/{total}");
}

#[test]
fn trajectories_respect_motion_bounds() {
    let scene = generate_scene(1, &WorldConfig::default()).unwrap();
    let one = simulate_trajectory(&scene, 1, &TrajectoryConfig::default(), 1);
    assert_eq!(one.len(), 1);
    for seed in 0..50 {
        let poses = simulate_trajectory(&scene, 20, &TrajectoryConfig::default(), seed);
        assert!(poses.iter().all(|p| p.scene_id == scene.id));
        for d in step_motions(&poses) {
            assert!(d.m.0.hypot(d.m.1) <= 2.0 + 1e-12);
            assert!(d.r.abs() <= 0.2 + 1e-12);
        }
    }
    let straight = TrajectoryConfig {
        model: MotionModel::Straight,
        ..Default::default()
    };
    let poses = simulate_trajectory(&scene, 10, &straight, 3);
    let steps = step_motions(&poses);
    assert!(poses.iter().all(|p| p.yaw == poses[0].yaw));
    for d in &steps {
        assert!((d.m.0 - steps[0].m.0).abs() < 1e-9 && (d.m.1 - steps[0].m.1).abs() < 1e-9);
    }
    assert_eq!(simulate_trajectory(&scene, 10, &straight, 3), poses);
}

#[test]
fn dataset_round_trip() {
    let cfg = SynthConfig {
        world: WorldConfig::default(),
        trajectory: TrajectoryConfig::default(),
        rig: rig(),
        output: output_grid(),
        frames: 3,
    };
    let data = generate_dataset(4..6, &cfg, Parallelism::Sequential).unwrap();
    assert_eq!(data, generate_dataset(4..6, &cfg, Parallelism::Rayon).unwrap());
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &data).unwrap();
    let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert_eq!(manifest, "classes drivable crossing car pedestrian\nseq_0004 3\nseq_0005 3\n");
    assert_eq!(read_dataset(dir.path()).unwrap(), data);
    assert!(read_dataset(&dir.path().join("missing")).is_err());
}
