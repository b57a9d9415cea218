#include "pwashield/dynamics.hpp"

#include <cmath>

namespace pwashield {

Matrix rotation_z(double theta) {
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    Matrix R(3, 3);
    R << c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0;
    return R;
}

}  // namespace pwashield
