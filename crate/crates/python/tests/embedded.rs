use pyo3::prelude::*;
use pyo3::types::PyDict;

use nfseg::nfseg as module;

#[test]
fn module_imports_and_computes() {
    pyo3::append_to_inittab!(module);
    Python::initialize();
    Python::attach(|py| {
        let locals = PyDict::new(py);
        py.run(
            cr#"
import nfseg
a = nfseg.LabelVolume([2, 2, 2], [1.0, 1.0, 1.0], [1, 1, 0, 0, 0, 0, 0, 0])
m = nfseg.overlap_metrics(a, a)
w = nfseg.wilcoxon_signed_rank([3.0, 4.0], [1.0, 1.0], 2)
try:
    nfseg.binarize(nfseg.ConfidenceVolume([1, 1, 1], [1.0, 1.0, 1.0], [0.7]), "custom")
    raised = False
except nfseg.ConfigError:
    raised = True
"#,
            None,
            Some(&locals),
        )
        .unwrap();
        let m = locals.get_item("m").unwrap().unwrap();
        assert_eq!(m.get_item("dsc").unwrap().extract::<f64>().unwrap(), 1.0);
        let w = locals.get_item("w").unwrap().unwrap();
        assert_eq!(w.get_item("p_bonferroni").unwrap().extract::<f64>().unwrap(), 1.0);
        assert!(locals.get_item("raised").unwrap().unwrap().extract::<bool>().unwrap());
    });
}
