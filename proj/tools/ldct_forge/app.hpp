#pragma once

namespace forge {

/// Exit status: 0 success, 1 runtime failure, 2 usage or configuration error.
int run(int argc, char** argv);

}  // namespace forge
