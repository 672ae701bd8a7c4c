/* tslint:disable */
/* eslint-disable */

/**
 * `[16 NF4 levels, 16 uniform levels, uniform mse, nf4 mse, nf4 win fraction]`.
 */
export function compareCodebooks(offset: number, group_size: number, groups: number, seed: number): Float64Array;

export function defaultOffset(): number;

/**
 * Flattened `[w..., w_eff..., d w_eff / d s...]`, each `samples` long.
 */
export function quantizerCurve(bits: number, clip: number, scale: number, range: number, samples: number): Float64Array;

export function warmupTimeline(eta: number, multimodal: number, linguistic: number, steps: number): Uint8Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly compareCodebooks: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly defaultOffset: () => number;
    readonly quantizerCurve: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly warmupTimeline: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
