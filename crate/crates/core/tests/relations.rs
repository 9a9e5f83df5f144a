use voltshm::plant::PlantParams;
use voltshm::volterra::{fit_pole_relations, PoleRelations, RelationObjective};
use voltshm::IdentificationSetup;

#[test]
fn fit_from_the_tabulated_row_improves_on_start_and_unit_relations() {
    let setup = IdentificationSetup::default();
    let start = PoleRelations::reference();
    let fit = fit_pole_relations(&PlantParams::nominal(), &setup, &start).unwrap();
    assert!(fit.objective <= fit.initial_objective);
    let objective = RelationObjective::new(&PlantParams::nominal(), &setup).unwrap();
    assert_eq!(objective.evaluate(&start), fit.initial_objective);
    assert!(fit.objective <= objective.evaluate(&PoleRelations::unit()));
    assert!(fit.relations.validate().is_ok());
}

/// With no polynomial stiffness the quadratic kernel carries no energy, so
/// its pole relations matter little. The cubic relations do matter: the odd
/// cubic kernel soaks up part of the linear-kernel misfit.
#[test]
fn quadratic_relations_are_nearly_flat_on_the_linear_plant() {
    let objective = RelationObjective::new(
        &PlantParams::nominal().linearized(),
        &IdentificationSetup::default(),
    )
    .unwrap();
    let base = PoleRelations::reference();
    let j0 = objective.evaluate(&base);
    let change = |i: usize, f: f64| {
        let mut p = base.to_array();
        p[i] *= f;
        objective.evaluate(&PoleRelations::from_array(p)) / j0 - 1.0
    };
    for f in [0.5, 0.8, 1.2, 1.5] {
        assert!(change(1, f).abs() < 0.01, "p2 x{f}");
        assert!(change(0, f).abs() < 0.05, "p1 x{f}");
    }
    for f in [0.9, 1.1] {
        assert!(change(0, f).abs() < 0.01, "p1 x{f}");
    }
    for f in [0.5, 0.8, 1.2, 1.5] {
        assert!(change(2, f).abs() > 0.1, "p3 x{f}");
    }
}
