#pragma once

// Single point of inclusion for the vendored httplib so every translation
// unit agrees on the TLS feature macro. Include this, never httplib.h
// directly.
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>
