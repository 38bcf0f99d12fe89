import { describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api";

function fakeFetch(status: number, body: unknown): typeof fetch {
  return async () =>
    new Response(body === null ? null : JSON.stringify(body), {
      status,
      headers: { "Content-Type": "application/json" },
    });
}

describe("ApiClient", () => {
  it("creates users", async () => {
    const api = new ApiClient("", fakeFetch(201, { user_id: 7 }));
    expect(await api.createUser()).toBe(7);
  });

  it("parses completion lists", async () => {
    const completions = [{ text: "espn", logprob: -1.5, rank: 1 }];
    const api = new ApiClient("", fakeFetch(200, { completions }));
    expect(await api.complete(7, "es", 5)).toEqual(completions);
  });

  it("sends prefix and user through the query string", async () => {
    let seen = "";
    const api = new ApiClient("http://host", async (input) => {
      seen = String(input);
      return new Response(JSON.stringify({ completions: [] }), { status: 200 });
    });
    await api.complete(3, "ba na", 4);
    expect(seen).toBe("http://host/complete?user_id=3&prefix=ba+na&top_n=4");
  });

  it("unwraps the error envelope", async () => {
    const api = new ApiClient("", fakeFetch(404, { error: "unknown_user", detail: "no user 9" }));
    await expect(api.complete(9, "ab")).rejects.toThrowError(ApiError);
    await expect(api.complete(9, "ab")).rejects.toMatchObject({ status: 404, detail: "no user 9" });
  });

  it("treats 204 select responses as success", async () => {
    const api = new ApiClient("", fakeFetch(204, null));
    await expect(api.select(1, "espn")).resolves.toBeUndefined();
  });

  it("health is false when the server is unreachable", async () => {
    const api = new ApiClient("", async () => {
      throw new TypeError("connection refused");
    });
    expect(await api.health()).toBe(false);
  });
});
