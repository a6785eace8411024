#pragma once

#define FURROW_VERSION "0.1.0"
