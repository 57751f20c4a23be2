//! Representative analytic-query DAG shapes.
//!
//! These are not the benchmark's exact plans; they reproduce typical stage
//! counts, fan-in structure and the skew of work between scan, join and
//! aggregation stages. Each stage is `(num_tasks, relative_work)`.

pub struct DagTemplate {
    pub name: &'static str,
    pub stages: &'static [(u32, f64)],
    pub edges: &'static [(u32, u32)],
}

pub static TPCH_TEMPLATES: &[DagTemplate] = &[
    // scan -> aggregate -> sort
    DagTemplate {
        name: "scan-agg",
        stages: &[(20, 6.0), (8, 2.0), (1, 0.3)],
        edges: &[(0, 1), (1, 2)],
    },
    // two scans joined, then aggregated
    DagTemplate {
        name: "two-way-join",
        stages: &[(16, 4.0), (8, 2.0), (10, 3.0), (4, 1.0), (1, 0.2)],
        edges: &[(0, 2), (1, 2), (2, 3), (3, 4)],
    },
    // star join over a fact table and three dimensions
    DagTemplate {
        name: "star-join",
        stages: &[
            (24, 7.0),
            (4, 0.8),
            (4, 0.6),
            (2, 0.4),
            (12, 3.0),
            (8, 2.0),
            (2, 0.5),
            (1, 0.1),
        ],
        edges: &[(0, 4), (1, 4), (2, 5), (4, 5), (3, 6), (5, 6), (6, 7)],
    },
    // left-deep join chain
    DagTemplate {
        name: "join-chain",
        stages: &[(10, 2.0), (10, 2.0), (6, 1.5), (6, 1.5), (4, 1.0), (4, 1.0), (2, 0.4)],
        edges: &[(0, 2), (1, 2), (2, 4), (3, 4), (4, 5), (5, 6)],
    },
    // subquery feeding a semi-join
    DagTemplate {
        name: "subquery",
        stages: &[(12, 3.0), (6, 1.0), (2, 0.5), (14, 4.0), (6, 1.5), (1, 0.2)],
        edges: &[(0, 1), (1, 2), (2, 4), (3, 4), (4, 5)],
    },
    // wide shuffle-heavy aggregation with a long tail
    DagTemplate {
        name: "bushy",
        stages: &[
            (8, 1.5),
            (8, 1.5),
            (8, 1.5),
            (8, 1.5),
            (6, 2.0),
            (6, 2.0),
            (3, 1.2),
            (1, 0.6),
            (1, 0.2),
        ],
        edges: &[(0, 4), (1, 4), (2, 5), (3, 5), (4, 6), (5, 6), (6, 7), (7, 8)],
    },
];
