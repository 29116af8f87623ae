#include <pybind11/pybind11.h>
PYBIND11_MODULE(pycavqed, m) { m.doc() = "placeholder"; }
