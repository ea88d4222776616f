// placeholder
#include <pybind11/pybind11.h>
PYBIND11_MODULE(_tgdm_core, m) { m.doc() = "placeholder"; }
