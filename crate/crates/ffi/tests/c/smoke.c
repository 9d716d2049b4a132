#include <math.h>
#include <stdio.h>
#include <string.h>

#include "affr.h"

#define CHECK(cond)                                                   \
  do {                                                                \
    if (!(cond)) {                                                    \
      const char *e = affr_last_error();                              \
      fprintf(stderr, "line %d: %s (%s)\n", __LINE__, #cond, e ? e : ""); \
      return 1;                                                       \
    }                                                                 \
  } while (0)

int main(void) {
  double eps = 0.0;
  CHECK(affr_rdp_epsilon(1.2, 1, 1e-5, 1.0, &eps) == AFFR_STATUS_OK);
  CHECK(fabs(eps - 4.345993815712290) < 1e-9);
  CHECK(affr_rdp_epsilon(-1.0, 1, 1e-5, 1.0, &eps) == AFFR_STATUS_INVALID_ARGUMENT);
  CHECK(affr_last_error() != NULL);

  const char *overrides[] = {"rounds=2"};
  AffrConfig *cfg = NULL;
  CHECK(affr_config_parse("scenario = \"ea\"\nseeds = [1]\n", overrides, 1, &cfg) == AFFR_STATUS_OK);
  char hash[17];
  CHECK(affr_config_hash(cfg, hash, sizeof hash) == AFFR_STATUS_OK);
  CHECK(strlen(hash) == 16);
  affr_config_free(cfg);
  CHECK(affr_config_parse("bogus = 1", NULL, 0, &cfg) == AFFR_STATUS_CONFIG_ERROR);
  CHECK(cfg == NULL);

  uint64_t ids[3] = {2, 5, 9};
  double vals[3][4] = {{1.0, -2.0, 0.5, 3.25}, {0.0, 4.0, -1.5, 1.0}, {2.0, 1.0, 1.0, -0.25}};
  AffrMaskSession *s = NULL;
  CHECK(affr_mask_session_new(7, 1, 0, ids, 3, 24, &s) == AFFR_STATUS_OK);
  uint64_t words[3][4];
  for (int k = 0; k < 3; k++) CHECK(affr_mask(s, ids[k], vals[k], 4, words[k]) == AFFR_STATUS_OK);
  double mean[4];
  CHECK(affr_aggregate(s, ids, &words[0][0], 3, 4, mean) == AFFR_STATUS_OK);
  for (int j = 0; j < 4; j++) CHECK(fabs(mean[j] - (vals[0][j] + vals[1][j] + vals[2][j]) / 3.0) < 1e-7);
  CHECK(affr_aggregate(s, ids, &words[0][0], 2, 4, mean) == AFFR_STATUS_PROTOCOL_ABORT);
  affr_mask_session_free(s);
  puts("ok");
  return 0;
}
