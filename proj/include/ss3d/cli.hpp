#pragma once
namespace ss3d { inline int cli(int, char**) { return 0; } }
