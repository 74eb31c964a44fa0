#include <math.h>
#include <stdio.h>
#include <string.h>

#include "pamkit.h"

#define CHECK(cond)                                          \
  do {                                                       \
    if (!(cond)) {                                           \
      fprintf(stderr, "check failed line %d\n", __LINE__);   \
      return 1;                                              \
    }                                                        \
  } while (0)

int main(void) {
  CHECK(strlen(pam_version()) > 0);

  double scores[4] = {0.1, 0.4, 0.35, 0.8};
  uint8_t labels[4] = {0, 0, 1, 1};
  double auc = 0.0;
  CHECK(pam_auc(scores, labels, 4, &auc) == PAM_STATUS_OK);
  CHECK(fabs(auc - 0.75) < 1e-12);

  uint8_t none[4] = {0, 0, 0, 0};
  CHECK(pam_auc(scores, none, 4, &auc) == PAM_STATUS_NUMERIC);
  char msg[256];
  CHECK(pam_last_error_message(msg, sizeof msg) > 0);

  double red = 0.0;
  CHECK(pam_error_reduction(0.908, 0.724, &red) == PAM_STATUS_OK);
  CHECK(fabs(red - 200.0) < 1e-9);

  float samples[8] = {0.0f, 0.5f, -0.5f, 1.0f, -1.0f, 0.25f, 0.0f, 0.0f};
  PamWaveform *w = NULL;
  CHECK(pam_waveform_new(samples, 8, 16000, &w) == PAM_STATUS_OK);
  CHECK(pam_waveform_len(w) == 8);
  float copy[8];
  size_t n = 0;
  CHECK(pam_waveform_samples(w, copy, 8, &n) == PAM_STATUS_OK && n == 8);
  CHECK(pam_waveform_samples(w, copy, 4, &n) == PAM_STATUS_BUFFER_TOO_SMALL);
  pam_waveform_free(w);

  double grid[6] = {1.0, 1.0, 1.0, 1.0, 1.0, 1.0};
  double out[6];
  PamPcenParams p = pam_pcen_default_params();
  CHECK(pam_pcen(grid, 3, 2, &p, out) == PAM_STATUS_OK);
  CHECK(out[0] > 0.0);
  puts("ok");
  return 0;
}
