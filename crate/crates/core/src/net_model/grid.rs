use super::scenario::{
    movement_label, InflowDocument, IntersectionDocument, MovementDocument, RoadDocument,
    ScenarioDocument, SCHEMA_VERSION,
};
use super::{build_network, NetworkSpec};
use crate::error::{Error, Result};

/// Direction of travel on a one-way road. Rows grow southwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Heading {
    North,
    East,
    South,
    West,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::North, Heading::East, Heading::South, Heading::West];

    pub fn letter(self) -> char {
        match self {
            Heading::North => 'N',
            Heading::East => 'E',
            Heading::South => 'S',
            Heading::West => 'W',
        }
    }

    pub fn left(self) -> Heading {
        match self {
            Heading::North => Heading::West,
            Heading::East => Heading::North,
            Heading::South => Heading::East,
            Heading::West => Heading::South,
        }
    }

    pub fn right(self) -> Heading {
        self.left().left().left()
    }

    fn step(self) -> (isize, isize) {
        match self {
            Heading::North => (-1, 0),
            Heading::East => (0, 1),
            Heading::South => (1, 0),
            Heading::West => (0, -1),
        }
    }

    fn is_vertical(self) -> bool {
        matches!(self, Heading::North | Heading::South)
    }
}

/// Parameters of the generated grid. Every road gets the same geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct GridParams {
    pub h: f64,
    pub road_length: f64,
    pub speed: f64,
    pub cycle_time: f64,
    pub left_ratio: f64,
    pub straight_ratio: f64,
    pub right_ratio: f64,
    pub saturation_rate: f64,
    pub exit_rate: f64,
    pub source_inflow: f64,
}

impl Default for GridParams {
    fn default() -> Self {
        GridParams {
            h: 100.0,
            road_length: 300.0,
            speed: 10.0,
            cycle_time: 100.0,
            left_ratio: 0.2,
            straight_ratio: 0.6,
            right_ratio: 0.2,
            saturation_rate: 0.4,
            exit_rate: 0.5,
            source_inflow: 0.1,
        }
    }
}

/// Id of the road leaving intersection `(r, c)` with heading `h`.
pub(crate) fn outbound_id(r: usize, c: usize, h: Heading) -> String {
    format!("o{r}_{c}{}", h.letter())
}

/// Id of the boundary source road entering `(r, c)` with heading `h`.
pub(crate) fn source_id(r: usize, c: usize, h: Heading) -> String {
    format!("s{r}_{c}{}", h.letter())
}

/// Manhattan-style grid of `rows x cols` signalized intersections.
///
/// Neighbouring intersections are joined by two one-way roads (one per
/// direction). Every boundary approach gets a source road in and a
/// destination road out. Each intersection allows left, straight and right
/// turns from every approach, grouped into four phases:
///
/// 1. north/south through traffic plus east/west right turns,
/// 2. north/south left turns,
/// 3. east/west through traffic plus north/south right turns,
/// 4. east/west left turns.
pub fn generate_grid(rows: usize, cols: usize, params: &GridParams) -> Result<NetworkSpec> {
    if rows == 0 || cols == 0 {
        return Err(Error::Validation(format!(
            "grid dimensions must be >= 1, got {rows}x{cols}"
        )));
    }
    let ratios = params.left_ratio + params.straight_ratio + params.right_ratio;
    if (ratios - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!(
            "turning ratios sum to {ratios}, expected 1"
        )));
    }
    let neighbour = |r: usize, c: usize, h: Heading| -> Option<(usize, usize)> {
        let (dr, dc) = h.step();
        let nr = r as isize + dr;
        let nc = c as isize + dc;
        (nr >= 0 && nc >= 0 && (nr as usize) < rows && (nc as usize) < cols)
            .then_some((nr as usize, nc as usize))
    };
    let road = |id: String| RoadDocument {
        id,
        length: params.road_length,
        speed: params.speed,
        source: false,
        destination: false,
        exit_rate: 0.0,
        inflow: None,
    };

    let mut roads = Vec::new();
    let mut intersections = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            // inbound road for each heading
            let mut inbound = Vec::with_capacity(4);
            for h in Heading::ALL {
                let back = match h {
                    Heading::North => Heading::South,
                    Heading::South => Heading::North,
                    Heading::East => Heading::West,
                    Heading::West => Heading::East,
                };
                let id = match neighbour(r, c, back) {
                    Some((pr, pc)) => outbound_id(pr, pc, h),
                    None => {
                        let id = source_id(r, c, h);
                        let mut rd = road(id.clone());
                        rd.source = true;
                        if params.source_inflow > 0.0 {
                            rd.inflow = Some(InflowDocument::Constant(params.source_inflow));
                        }
                        roads.push(rd);
                        id
                    }
                };
                inbound.push((h, id));
            }
            for h in Heading::ALL {
                let mut rd = road(outbound_id(r, c, h));
                if neighbour(r, c, h).is_none() {
                    rd.destination = true;
                    rd.exit_rate = params.exit_rate;
                }
                roads.push(rd);
            }

            let mut movements = Vec::with_capacity(12);
            let mut phases: Vec<Vec<String>> = vec![Vec::new(); 4];
            for (h, from) in &inbound {
                let turns = [
                    (h.left(), params.left_ratio, if h.is_vertical() { 1 } else { 3 }),
                    (*h, params.straight_ratio, if h.is_vertical() { 0 } else { 2 }),
                    (h.right(), params.right_ratio, if h.is_vertical() { 2 } else { 0 }),
                ];
                for (out, ratio, phase) in turns {
                    let to = outbound_id(r, c, out);
                    phases[phase].push(movement_label(from, &to));
                    movements.push(MovementDocument {
                        from: from.clone(),
                        to,
                        routing_ratio: ratio,
                        saturation_rate: params.saturation_rate,
                    });
                }
            }
            intersections.push(IntersectionDocument {
                id: format!("I{r}_{c}"),
                phases,
                movements,
            });
        }
    }

    build_network(&ScenarioDocument {
        schema_version: SCHEMA_VERSION,
        name: format!("grid_{rows}x{cols}"),
        h: params.h,
        cycle_time: params.cycle_time,
        conservation: true,
        allow_phase_overlap: false,
        roads,
        intersections,
    })
}
